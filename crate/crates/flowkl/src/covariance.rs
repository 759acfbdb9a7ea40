//! Empirical covariance kernels and their structural checks.
//!
//! The operator-valued kernel of an ensemble is the blocked reshape of
//! `(1/N)·XXᵀ`: block `(k, l)` averages the outer products of the node-`k`
//! and node-`l` coordinate blocks of each sample. The scalar autocovariance
//! traces these blocks, `C(k, l) = (1/N) Σ_j ⟨x_j(k), x_j(l)⟩`.
//!
//! Both estimators consume the ensemble as given; callers working with
//! uncentered data subtract the mean flow first via
//! [`crate::FlowEnsemble::centered`].
//!
//! The checks: [`nnd_check`] probes the defining nonnegative quadratic form
//! on random node/vector choices and eigensolves the full assembly;
//! [`trace_identity`] compares `Σ λⱼ` against the quadrature trace of the
//! kernel diagonal, the two sides of the trace-class identity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BasisTruncation, DiscreteKernel, EigenSystem, FlowEnsemble, Grid};

/// Real-valued autocovariance sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarKernel {
    grid: Grid,
    values: DMatrix<f64>,
}

impl ScalarKernel {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let n = grid.n();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::dim("scalar kernel order", n, values.nrows().max(values.ncols())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("scalar kernel"));
        }
        for r in 0..n {
            for c in (r + 1)..n {
                if values[(r, c)] != values[(c, r)] {
                    return Err(Error::NotSymmetric {
                        row: r,
                        col: c,
                        deviation: (values[(r, c)] - values[(c, r)]).abs(),
                    });
                }
            }
        }
        Ok(ScalarKernel { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Reinterpret as an operator-valued kernel with a one-dimensional
    /// ambient space, so the spectral machinery applies unchanged.
    pub fn to_operator_kernel(&self) -> DiscreteKernel {
        let trunc = BasisTruncation::new(1).expect("m = 1 is valid");
        DiscreteKernel::from_assembly(self.grid.clone(), trunc, self.values.clone())
            .expect("scalar kernel is symmetric by construction")
    }
}

/// Blocked reshape of `(1/N)·XXᵀ` for the ensemble as given.
pub fn empirical_operator_kernel(ens: &FlowEnsemble) -> Result<DiscreteKernel> {
    let n_samples = ens.n_samples();
    if n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let x = ens.data();
    let mut assembly = x * x.transpose();
    assembly /= n_samples as f64;
    // products of the form A·Aᵀ are symmetric up to summation order; mirror
    // once so block(l,k) is exactly block(k,l)ᵀ
    DiscreteKernel::from_mirrored(ens.grid().clone(), ens.trunc(), assembly)
}

/// Scalar autocovariance `values(k, l) = (1/N) Σ_j ⟨x_j(k), x_j(l)⟩`;
/// pointwise the trace of the operator-kernel blocks.
pub fn scalar_autocovariance(ens: &FlowEnsemble) -> Result<ScalarKernel> {
    let n_samples = ens.n_samples();
    if n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let n = ens.grid().n();
    let m = ens.trunc().m();
    let x = ens.data();
    let mut values = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in k..n {
            let a = x.rows(k * m, m);
            let b = x.rows(l * m, m);
            let mut acc = 0.0;
            for (va, vb) in a.iter().zip(b.iter()) {
                acc += va * vb;
            }
            let v = acc / n_samples as f64;
            values[(k, l)] = v;
            values[(l, k)] = v;
        }
    }
    ScalarKernel::new(ens.grid().clone(), values)
}

/// Outcome of the nonnegative-definiteness check.
#[derive(Debug, Clone, Serialize)]
pub struct NndReport {
    /// Smallest probed value of the defining quadratic form
    /// `Σ_{i,j} ⟨K(v_i, v_j) h_i, h_j⟩`.
    pub min_quadratic_form: f64,
    /// Smallest eigenvalue of the full assembly.
    pub min_eigenvalue: f64,
    /// Largest absolute assembly entry, the scale the minima compare against.
    pub scale: f64,
    pub probes: usize,
}

/// Probe the defining quadratic form on random node subsets and ambient
/// vectors, and eigensolve the full assembly.
///
/// Probing is cheap and catches gross violations; the eigensolve is
/// definitive at desk scale. Deterministic single-node coordinate probes are
/// always included so diagonal violations are witnessed regardless of seed.
///
/// Panics if `probes == 0`.
pub fn nnd_check(kernel: &DiscreteKernel, probes: usize, seed: u64) -> NndReport {
    assert!(probes >= 1, "at least one probe required");
    let n = kernel.grid().n();
    let m = kernel.trunc().m();
    let mut min_form = f64::INFINITY;

    // coordinate probes: single node, single basis vector
    for k in 0..n {
        for i in 0..m {
            min_form = min_form.min(kernel.block(k, k)[(i, i)]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let subset = rng.random_range(1..=n.min(4));
        let nodes: Vec<usize> = (0..subset).map(|_| rng.random_range(0..n)).collect();
        let h: Vec<DVector<f64>> = (0..subset)
            .map(|_| DVector::from_fn(m, |_, _| rng.sample(StandardNormal)))
            .collect();
        let mut form = 0.0;
        for (a, &ka) in nodes.iter().enumerate() {
            for (b, &kb) in nodes.iter().enumerate() {
                // ⟨K(v_a, v_b) h_a, h_b⟩ = h_bᵀ · block(a,b) · h_a
                form += (h[b].transpose() * kernel.block(ka, kb) * &h[a])[(0, 0)];
            }
        }
        min_form = min_form.min(form);
    }

    let eig = SymmetricEigen::new(kernel.assembly().clone());
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);

    NndReport {
        min_quadratic_form: min_form,
        min_eigenvalue,
        scale: kernel.max_abs(),
        probes,
    }
}

/// The two sides of the trace-class identity.
#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    /// `Σ_j λ_j` over the provided eigensystem.
    pub lhs: f64,
    /// `w · Σ_k tr K(t_k, t_k)`, the quadrature trace of the diagonal.
    pub rhs: f64,
    pub rel_err: f64,
    /// `rhs − lhs` when the eigensystem does not exhaust the rank; the mass
    /// carried by the discarded components.
    pub truncation_deficit: Option<f64>,
}

/// Compare `Σ λⱼ` with the quadrature trace of the kernel diagonal.
///
/// For a full-rank decomposition the two sides are both the trace of the
/// weighted assembly and agree to machine precision. A rank-truncated
/// eigensystem is not an error: the report carries the deficit instead.
pub fn trace_identity(kernel: &DiscreteKernel, eig: &EigenSystem) -> Result<TraceReport> {
    if eig.grid() != kernel.grid() || eig.trunc() != kernel.trunc() {
        return Err(Error::GridMismatch);
    }
    let lhs: f64 = eig.eigenvalues().iter().sum();
    let rhs = kernel.trace_quadrature();
    let denom = if rhs != 0.0 { rhs.abs() } else { 1.0 };
    let rel_err = (lhs - rhs).abs() / denom;
    let full_rank = eig.count() == kernel.grid().n() * kernel.trunc().m();
    Ok(TraceReport {
        lhs,
        rhs,
        rel_err,
        truncation_deficit: if full_rank { None } else { Some(rhs - lhs) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlowSample, Grid};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn grid(n: usize) -> Grid {
        Grid::unit(n).unwrap()
    }

    fn m(mm: usize) -> BasisTruncation {
        BasisTruncation::new(mm).unwrap()
    }

    #[test]
    fn single_sample_kernel_is_outer_product() {
        let g = grid(2);
        let t = m(2);
        let s = FlowSample::new(
            g,
            t,
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        )
        .unwrap();
        let ens = FlowEnsemble::from_samples(std::slice::from_ref(&s)).unwrap();
        let k = empirical_operator_kernel(&ens).unwrap();
        // block (0,1) = x(0)·x(1)ᵀ with x(0) = (1,2), x(1) = (3,4)
        let b01 = k.block(0, 1).into_owned();
        assert_eq!(b01, DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 6.0, 8.0]));
        let b10 = k.block(1, 0).into_owned();
        assert_eq!(b10, b01.transpose());
    }

    #[test]
    fn two_scalar_samples_average() {
        let g = grid(1);
        let t = m(1);
        let data = DMatrix::from_row_slice(1, 2, &[2.0, -2.0]);
        let ens = FlowEnsemble::new(g, t, data).unwrap();
        let k = empirical_operator_kernel(&ens).unwrap();
        assert_eq!(k.assembly()[(0, 0)], 4.0);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        let g = grid(2);
        let t = m(1);
        let ens = FlowEnsemble::new(g, t, DMatrix::zeros(2, 0)).unwrap();
        assert!(matches!(
            empirical_operator_kernel(&ens),
            Err(Error::EmptyEnsemble)
        ));
        assert!(matches!(
            scalar_autocovariance(&ens),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn scalar_autocovariance_single_block() {
        let g = grid(1);
        let t = m(2);
        let s = FlowSample::new(g, t, DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        let ens = FlowEnsemble::from_samples(&[s]).unwrap();
        let c = scalar_autocovariance(&ens).unwrap();
        assert_eq!(c.values()[(0, 0)], 25.0);
    }

    #[test]
    fn scalar_autocovariance_traces_operator_blocks() {
        let g = grid(3);
        let t = m(2);
        let samples: Vec<FlowSample> = (0..4)
            .map(|j| {
                FlowSample::from_fn(g.clone(), t, |tk, i| {
                    ((j + 1) as f64 * tk + i as f64).sin()
                })
            })
            .collect();
        let ens = FlowEnsemble::from_samples(&samples).unwrap();
        let k = empirical_operator_kernel(&ens).unwrap();
        let c = scalar_autocovariance(&ens).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(
                    c.values()[(a, b)],
                    k.block(a, b).trace(),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn nnd_check_passes_gram_kernels_and_flags_negations() {
        let g = grid(4);
        let t = m(2);
        let samples: Vec<FlowSample> = (0..6)
            .map(|j| {
                FlowSample::from_fn(g.clone(), t, |tk, i| {
                    (tk * (j + 1) as f64).cos() + 0.1 * i as f64
                })
            })
            .collect();
        let ens = FlowEnsemble::from_samples(&samples).unwrap();
        let k = empirical_operator_kernel(&ens).unwrap();
        let report = nnd_check(&k, 64, 7);
        assert!(report.min_quadratic_form >= -1e-10 * report.scale);
        assert!(report.min_eigenvalue >= -1e-10 * report.scale);

        // negate one diagonal block: a constructed violation
        let mut assembly = k.assembly().clone();
        let mm = t.m();
        for i in 0..mm {
            for j in 0..mm {
                assembly[(i, j)] = -assembly[(i, j)];
            }
        }
        let bad = DiscreteKernel::from_mirrored(g, t, assembly).unwrap();
        let report = nnd_check(&bad, 64, 7);
        assert!(report.min_quadratic_form < 0.0);
        assert!(report.min_eigenvalue < 0.0);
    }

    #[test]
    fn brownian_kernel_assembly_is_psd() {
        let spec = crate::generators::SeparableBrownianSpec::new(vec![1.0, 0.5], 4, 0).unwrap();
        let k = spec.population_kernel(&grid(16)).unwrap();
        let report = nnd_check(&k, 32, 11);
        assert!(report.min_eigenvalue >= -1e-12);
    }
}
