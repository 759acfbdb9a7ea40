//! Seeded synthetic ensembles with analytically known spectra.
//!
//! Two families:
//!
//! - [`SeparableBrownianSpec`]: the flow `χ(t) = Σ_j Σ_i √(λ_j μ_i) ξ_{j,i}
//!   φ_j(t) e_i` built from the Brownian-motion modes
//!   `φ_j(t) = √(2/L) sin((j−1/2)πt/L)` with `λ_j = (L/((j−1/2)π))²` and an
//!   ambient-operator spectrum `μ`. Its covariance kernel factorizes as
//!   `min(s,t)·diag(μ)` in the `j_max → ∞` limit, so every downstream check
//!   has closed-form ground truth.
//! - [`FiniteRankSpec`]: the expansion run forward from planted eigenvalues
//!   and quadrature-orthonormal eigenflows, which the spectral module must
//!   recover exactly from the empirical covariance.
//!
//! Sampling is deterministic given the spec seed: every sample column draws
//! from its own counter-derived stream, so parallel generation is
//! reproducible at the bit level regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{BasisTruncation, DiscreteKernel, FlowEnsemble, FlowSample, Grid};
use crate::tol;

/// Law of the random expansion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientLaw {
    Gaussian,
    Rademacher,
}

/// `j`-th eigenvalue of the Brownian kernel `min(s,t)` on `[0, L]`.
pub fn brownian_eigenvalue(j: usize, domain_length: f64) -> f64 {
    let freq = (j as f64 - 0.5) * PI;
    (domain_length / freq).powi(2)
}

/// `j`-th eigenfunction of the Brownian kernel, unit-normalized in `L²[0, L]`.
pub fn brownian_eigenfunction(j: usize, t: f64, domain_length: f64) -> f64 {
    (2.0 / domain_length).sqrt() * ((j as f64 - 0.5) * PI * t / domain_length).sin()
}

/// Exact eigenvalue of the *midpoint-discretized* Brownian kernel: the
/// weighted matrix `w·[min(t_k, t_l)]` is diagonalized by the discrete sine
/// modes with eigenvalues `(L/n)² / (4 sin²((j−1/2)π/2n))`.
pub fn brownian_discrete_eigenvalue(j: usize, grid: &Grid) -> f64 {
    let n = grid.n() as f64;
    let theta = (j as f64 - 0.5) * PI / (2.0 * n);
    (grid.domain_length() / n).powi(2) / (4.0 * theta.sin().powi(2))
}

/// Separable Brownian flow: temporal Brownian modes tensored with a fixed
/// ambient-operator spectrum `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableBrownianSpec {
    /// Eigenvalues of the ambient-space operator, strictly positive and
    /// nonincreasing. The retained basis dimension is `mu.len()`.
    pub mu: Vec<f64>,
    /// Number of temporal modes kept by the sampler.
    pub j_max: usize,
    pub seed: u64,
}

impl SeparableBrownianSpec {
    pub fn new(mu: Vec<f64>, j_max: usize, seed: u64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::param("mu must contain at least one eigenvalue"));
        }
        if mu.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::param("mu entries must be positive and finite"));
        }
        if mu.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::param("mu must be nonincreasing"));
        }
        if j_max == 0 {
            return Err(Error::param("j_max must be at least 1"));
        }
        Ok(SeparableBrownianSpec { mu, j_max, seed })
    }

    /// Default spectrum `μ_i = 2⁻ⁱ`, `i = 1..=m`.
    pub fn geometric(m: usize, j_max: usize, seed: u64) -> Result<Self> {
        let mu = (1..=m).map(|i| 0.5f64.powi(i as i32)).collect();
        Self::new(mu, j_max, seed)
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    /// Target kernel `min(s,t)·diag(μ)` sampled on the grid: the covariance
    /// of the flow in the `j_max → ∞` limit.
    pub fn population_kernel(&self, grid: &Grid) -> Result<DiscreteKernel> {
        let trunc = BasisTruncation::new(self.m())?;
        let mu = self.mu.clone();
        DiscreteKernel::from_upper_blocks(grid.clone(), trunc, |k, l| {
            let v = grid.node(k).min(grid.node(l));
            DMatrix::from_fn(mu.len(), mu.len(), |i, j| if i == j { v * mu[i] } else { 0.0 })
        })
    }

    /// Covariance actually realized by the sampler: the modal sum truncated
    /// at `j_max` temporal modes.
    pub fn truncated_population_kernel(&self, grid: &Grid) -> Result<DiscreteKernel> {
        let trunc = BasisTruncation::new(self.m())?;
        let l = grid.domain_length();
        // temporal kernel Σ_{j≤j_max} λ_j φ_j(s) φ_j(t)
        let n = grid.n();
        let mut temporal = DMatrix::<f64>::zeros(n, n);
        for j in 1..=self.j_max {
            let lam = brownian_eigenvalue(j, l);
            let phi: Vec<f64> = (0..n)
                .map(|k| brownian_eigenfunction(j, grid.node(k), l))
                .collect();
            for k in 0..n {
                for kk in k..n {
                    temporal[(k, kk)] += lam * phi[k] * phi[kk];
                }
            }
        }
        let mu = self.mu.clone();
        DiscreteKernel::from_upper_blocks(grid.clone(), trunc, |k, l| {
            let v = temporal[(k, l)];
            DMatrix::from_fn(mu.len(), mu.len(), |i, j| if i == j { v * mu[i] } else { 0.0 })
        })
    }

    /// Trace mass dropped by the temporal truncation:
    /// `Σ_{j>j_max} λ_j · Σ_i μ_i`. The full temporal sum is `L²/2`.
    pub fn truncation_bias(&self, domain_length: f64) -> f64 {
        let full = domain_length.powi(2) / 2.0;
        let kept: f64 = (1..=self.j_max)
            .map(|j| brownian_eigenvalue(j, domain_length))
            .sum();
        (full - kept) * self.mu.iter().sum::<f64>()
    }
}

/// Draw a separable Brownian ensemble of `n_samples` flows.
///
/// Each sample is `χ(t) = Σ_{j≤j_max} Σ_{i≤m} √(λ_j μ_i) ξ_{j,i} φ_j(t) e_i`
/// with i.i.d. standard normal `ξ`, deterministic given the spec seed.
pub fn generate_separable_brownian(
    spec: &SeparableBrownianSpec,
    grid: &Grid,
    trunc: BasisTruncation,
    n_samples: usize,
) -> Result<FlowEnsemble> {
    if trunc.m() != spec.m() {
        return Err(Error::dim("mu length vs basis truncation", trunc.m(), spec.m()));
    }
    let n = grid.n();
    let m = trunc.m();
    let l = grid.domain_length();
    // modes(k, j) = √λ_j · φ_j(t_k)
    let modes = DMatrix::from_fn(n, spec.j_max, |k, j| {
        brownian_eigenvalue(j + 1, l).sqrt() * brownian_eigenfunction(j + 1, grid.node(k), l)
    });
    let sqrt_mu: Vec<f64> = spec.mu.iter().map(|x| x.sqrt()).collect();

    let columns: Vec<DVector<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|sample_idx| {
            let mut rng = sample_rng(spec.seed, sample_idx);
            // ξ in fixed draw order: temporal mode outer, basis index inner
            let xi = DMatrix::from_fn(spec.j_max, m, |_, _| rng.sample(StandardNormal));
            let mut scaled = xi;
            for i in 0..m {
                scaled.column_mut(i).scale_mut(sqrt_mu[i]);
            }
            let coeffs = &modes * scaled; // n × m
            stack_column(&coeffs)
        })
        .collect();

    ensemble_from_columns(grid.clone(), trunc, n * m, columns)
}

/// Planted finite-rank expansion: eigenvalues with quadrature-orthonormal
/// eigenflows and the coefficient law to run the series forward.
#[derive(Debug, Clone)]
pub struct FiniteRankSpec {
    eigenvalues: Vec<f64>,
    eigenflows: Vec<FlowSample>,
    coefficient_law: CoefficientLaw,
    seed: u64,
}

impl FiniteRankSpec {
    pub fn new(
        eigenvalues: Vec<f64>,
        eigenflows: Vec<FlowSample>,
        coefficient_law: CoefficientLaw,
        seed: u64,
    ) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.len() != eigenflows.len() {
            return Err(Error::dim(
                "eigenvalues vs eigenflows",
                eigenflows.len(),
                eigenvalues.len(),
            ));
        }
        if eigenvalues.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::param("planted eigenvalues must be positive"));
        }
        if eigenvalues.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::param("planted eigenvalues must be nonincreasing"));
        }
        let first = &eigenflows[0];
        for f in &eigenflows[1..] {
            if f.grid() != first.grid() || f.trunc() != first.trunc() {
                return Err(Error::GridMismatch);
            }
        }
        let dev = gram_deviation(&eigenflows)?;
        if dev > tol::GRAM_IDENTITY {
            return Err(Error::NotOrthonormal {
                deviation: dev,
                tolerance: tol::GRAM_IDENTITY,
            });
        }
        Ok(FiniteRankSpec {
            eigenvalues,
            eigenflows,
            coefficient_law,
            seed,
        })
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenflows(&self) -> &[FlowSample] {
        &self.eigenflows
    }

    pub fn grid(&self) -> &Grid {
        self.eigenflows[0].grid()
    }

    pub fn trunc(&self) -> BasisTruncation {
        self.eigenflows[0].trunc()
    }

    /// The exact covariance kernel of the planted expansion,
    /// `Σ_r λ_r Φ_r(s) ⊗ Φ_r(t)`.
    pub fn population_kernel(&self) -> Result<DiscreteKernel> {
        let grid = self.grid().clone();
        let trunc = self.trunc();
        let stacked: Vec<DVector<f64>> = self.eigenflows.iter().map(|f| f.stack()).collect();
        let mn = grid.n() * trunc.m();
        let mut assembly = DMatrix::zeros(mn, mn);
        for (lam, phi) in self.eigenvalues.iter().zip(&stacked) {
            for r in 0..mn {
                for c in r..mn {
                    assembly[(r, c)] += lam * phi[r] * phi[c];
                }
            }
        }
        DiscreteKernel::from_mirrored(grid, trunc, assembly)
    }
}

/// Run the planted expansion forward: `χ = Σ_r √λ_r ξ_r Φ_r` on the grid.
pub fn generate_finite_rank(spec: &FiniteRankSpec, n_samples: usize) -> Result<FlowEnsemble> {
    let grid = spec.grid().clone();
    let trunc = spec.trunc();
    let mn = grid.n() * trunc.m();
    let rank = spec.rank();
    let mut flows = DMatrix::zeros(mn, rank);
    for (r, f) in spec.eigenflows().iter().enumerate() {
        flows.set_column(r, &f.stack());
    }
    let sqrt_lambda: Vec<f64> = spec.eigenvalues().iter().map(|x| x.sqrt()).collect();
    let law = spec.coefficient_law;
    let seed = spec.seed;

    let columns: Vec<DVector<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|sample_idx| {
            let mut rng = sample_rng(seed, sample_idx);
            let xi = DVector::from_fn(rank, |r, _| sqrt_lambda[r] * draw(&mut rng, law));
            &flows * xi
        })
        .collect();

    ensemble_from_columns(grid, trunc, mn, columns)
}

/// Two-pass Gram–Schmidt under the quadrature inner product.
///
/// Preserves the span and returns a family whose Gram matrix deviates from
/// the identity by less than [`tol::ORTHONORMALIZE_OUTPUT`]. Fails with
/// [`Error::RankDeficient`] when a pivot drops below
/// [`tol::ORTHONORMALIZE_PIVOT_RATIO`] times the largest input norm.
pub fn orthonormalize(raw: &[FlowSample]) -> Result<Vec<FlowSample>> {
    orthonormalize_with(raw, tol::ORTHONORMALIZE_PIVOT_RATIO)
}

pub fn orthonormalize_with(raw: &[FlowSample], pivot_ratio: f64) -> Result<Vec<FlowSample>> {
    match mgs(raw, pivot_ratio, false)? {
        MgsOutcome::Full(flows) => Ok(flows),
        MgsOutcome::Skipped(..) => unreachable!("strict mode errors on deficiency"),
    }
}

/// Gram–Schmidt that silently drops dependent elements instead of failing;
/// used to turn redundant generating families into orthonormal bases.
pub fn orthonormalize_skipping(raw: &[FlowSample], pivot_ratio: f64) -> Result<Vec<FlowSample>> {
    match mgs(raw, pivot_ratio, true)? {
        MgsOutcome::Full(flows) | MgsOutcome::Skipped(flows) => Ok(flows),
    }
}

enum MgsOutcome {
    Full(Vec<FlowSample>),
    Skipped(Vec<FlowSample>),
}

fn mgs(raw: &[FlowSample], pivot_ratio: f64, skip_deficient: bool) -> Result<MgsOutcome> {
    if raw.is_empty() {
        return Ok(MgsOutcome::Full(Vec::new()));
    }
    let leading = raw
        .iter()
        .map(|f| f.norm_sq().sqrt())
        .fold(0.0, f64::max);
    let threshold = pivot_ratio * leading;
    let mut out: Vec<FlowSample> = Vec::with_capacity(raw.len());
    let mut skipped = false;
    for (index, f) in raw.iter().enumerate() {
        let mut v = f.clone();
        // two projection passes keep the Gram deviation at machine level
        for _ in 0..2 {
            for q in &out {
                let c = v.inner(q)?;
                v = v.add_scaled(-c, q)?;
            }
        }
        let pivot = v.norm_sq().sqrt();
        if pivot <= threshold {
            if skip_deficient {
                skipped = true;
                continue;
            }
            return Err(Error::RankDeficient {
                index,
                pivot,
                threshold,
            });
        }
        out.push(v.scaled(1.0 / pivot));
    }
    Ok(if skipped {
        MgsOutcome::Skipped(out)
    } else {
        MgsOutcome::Full(out)
    })
}

/// Largest deviation of the quadrature Gram matrix from the identity.
pub fn gram_deviation(flows: &[FlowSample]) -> Result<f64> {
    let mut dev: f64 = 0.0;
    for (a, fa) in flows.iter().enumerate() {
        for (b, fb) in flows.iter().enumerate() {
            let target = if a == b { 1.0 } else { 0.0 };
            dev = dev.max((fa.inner(fb)? - target).abs());
        }
    }
    Ok(dev)
}

fn sample_rng(seed: u64, sample_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_idx as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, law: CoefficientLaw) -> f64 {
    match law {
        CoefficientLaw::Gaussian => rng.sample(StandardNormal),
        CoefficientLaw::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

fn stack_column(coeffs: &DMatrix<f64>) -> DVector<f64> {
    let (n, m) = coeffs.shape();
    DVector::from_fn(n * m, |idx, _| coeffs[(idx / m, idx % m)])
}

fn ensemble_from_columns(
    grid: Grid,
    trunc: BasisTruncation,
    mn: usize,
    columns: Vec<DVector<f64>>,
) -> Result<FlowEnsemble> {
    let mut data = DMatrix::zeros(mn, columns.len());
    for (j, col) in columns.iter().enumerate() {
        data.set_column(j, col);
    }
    FlowEnsemble::new(grid, trunc, data)
}
