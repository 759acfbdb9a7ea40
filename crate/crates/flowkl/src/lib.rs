//! Truncated Karhunen–Loève expansions for Hilbert-space-valued random flows.
//!
//! A *flow* is a random function χ : 𝒯 → ℍ from a compact interval into a
//! separable Hilbert space. This crate works with the fully discretized
//! picture: the interval carries a uniform midpoint grid with quadrature
//! weight `w`, and ℍ is truncated to the span of its first `m` basis vectors.
//! A flow is then an `n × m` coefficient matrix, an ensemble of `N` flows is
//! the `(m·n) × N` column-stacked data matrix `X`, and the covariance
//! structure is an operator-valued kernel sampled as `n × n` blocks of
//! `m × m` matrices.
//!
//! The crate computes the spectral decomposition of the discretized
//! covariance operator along two routes (a dense eigendecomposition of the
//! assembled kernel, and the SVD of the data matrix) and turns the classical
//! identities of the expansion into executable checks:
//!
//! - eigenflow series reconstruction of the kernel with uniform (sup over
//!   grid) trace-norm control, and domination of every partial sum by the
//!   kernel diagonal ([`diagnostics::mercer_convergence_report`]),
//! - nonnegative definiteness of assembled kernels by random quadratic-form
//!   probes and a full eigensolve ([`covariance::nnd_check`]),
//! - the trace exchange `Σ λⱼ = ∫ tr K(s,s) ds` ([`covariance::trace_identity`]),
//! - the pointwise mean-square truncation error profile
//!   `tr K(t,t) − Σ λⱼ ‖Φⱼ(t)‖²` with a Monte Carlo cross-check
//!   ([`diagnostics::uniform_mse_profile`]),
//! - uncorrelatedness of the expansion scores and in-sample optimality of
//!   the basis against alternative orthonormal families
//!   ([`diagnostics::scalar_comparison`], [`diagnostics::projection_mse`]).
//!
//! Synthetic ensembles with analytically known spectra are provided by
//! [`generators`], and [`io`] defines the binary interchange formats
//! (`FLOWKL01` ensembles, `FLOWKK01` kernels, `FLOWKE01` eigensystems).
//!
//! All floating-point work is in `f64`. Tolerances used by the checks are
//! named constants in [`tol`], never magic numbers inside operations.

// numerical code where indexed loops over nodes and components are clearer
#![allow(clippy::needless_range_loop)]

pub mod covariance;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod io;
pub mod model;
pub mod spectral;
pub mod tol;

pub use error::{Error, Result};
pub use model::{
    l2_inner, stack, unstack, BasisTruncation, DiscreteKernel, EigenSystem, FlowEnsemble,
    FlowSample, Grid, ScoreMatrix,
};
