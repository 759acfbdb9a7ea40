//! Executable spectral identities: partial-sum convergence, domination,
//! truncation-error profiles, and basis comparisons.
//!
//! Everything here is a pure function of immutable inputs producing a
//! report; nothing mutates shared state, and Monte Carlo replicates are
//! driven by seeded ensembles passed in by the caller. "sup over the index
//! set" always means the maximum over grid nodes.
//!
//! Trace norms of the `m × m` residual blocks are computed from dense
//! singular values, exact and cheap at the supported truncations.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{empirical_operator_kernel, scalar_autocovariance};
use crate::error::{Error, Result};
use crate::generators::orthonormalize_skipping;
use crate::model::{
    BasisTruncation, DiscreteKernel, EigenSystem, FlowEnsemble, FlowSample, Grid,
};
use crate::spectral::{compute_scores, naive_eigendecomposition};
use crate::tol;

/// Partial-sum reconstruction quality of an eigensystem against its kernel.
#[derive(Debug, Clone, Serialize)]
pub struct MercerReport {
    #[serde(rename = "J_values")]
    pub j_values: Vec<usize>,
    /// Sup over node pairs of the trace norm of `K − Σ_{j≤J} λ_j Φ_j ⊗ Φ_j`.
    pub residual_sup_trace: Vec<f64>,
    /// Min over nodes of the smallest eigenvalue of the diagonal residual
    /// block, the domination check.
    pub diag_psd_min_eig: Vec<f64>,
    /// Same minimum, normalized per node by `tr K(t_k, t_k)`.
    pub diag_psd_worst_rel: Vec<f64>,
    /// Largest excess of a partial-sum block trace norm over the
    /// Cauchy–Schwarz bound `√(tr K(s,s))·√(tr K(t,t))`.
    pub partial_sum_bound_excess: Vec<f64>,
    /// `sup_k tr K(t_k, t_k)`, the scale residuals compare against.
    pub scale: f64,
}

impl MercerReport {
    /// One row per truncation level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "J,residual_sup_trace,diag_psd_min_eig,diag_psd_worst_rel,partial_sum_bound_excess\n",
        );
        for (idx, j) in self.j_values.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                j,
                self.residual_sup_trace[idx],
                self.diag_psd_min_eig[idx],
                self.diag_psd_worst_rel[idx],
                self.partial_sum_bound_excess[idx],
            ));
        }
        out
    }
}

/// Truncation-error profile of the expansion.
#[derive(Debug, Clone, Serialize)]
pub struct KlReport {
    #[serde(rename = "J_values")]
    pub j_values: Vec<usize>,
    /// Sup over nodes of `tr K(t,t) − Σ_{j≤J} λ_j ‖Φ_j(t)‖²`.
    pub mse_profile_sup: Vec<f64>,
    /// Monte Carlo estimate of the same sup from fresh samples, when run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_mse_sup: Option<Vec<f64>>,
    /// Standard error of the Monte Carlo mean at its maximizing node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_standard_error: Option<Vec<f64>>,
    /// Largest pointwise `|closed form − MC| / SE` over nodes and sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_max_sigma_gap: Option<f64>,
    /// `sup_k tr K(t_k, t_k)`.
    pub scale: f64,
}

impl KlReport {
    pub fn to_csv(&self) -> String {
        let mc = self.mc_mse_sup.is_some();
        let mut out = String::from(if mc {
            "J,mse_profile_sup,mc_mse_sup,mc_standard_error\n"
        } else {
            "J,mse_profile_sup\n"
        });
        for (idx, j) in self.j_values.iter().enumerate() {
            if mc {
                out.push_str(&format!(
                    "{},{:.17e},{:.17e},{:.17e}\n",
                    j,
                    self.mse_profile_sup[idx],
                    self.mc_mse_sup.as_ref().unwrap()[idx],
                    self.mc_standard_error.as_ref().unwrap()[idx],
                ));
            } else {
                out.push_str(&format!("{},{:.17e}\n", j, self.mse_profile_sup[idx]));
            }
        }
        out
    }
}

/// `Σ_{j≤J} λ_j Φ_j ⊗ Φ_j` assembled as a kernel; symmetric by construction.
pub fn mercer_partial_sum(eig: &EigenSystem, j: usize) -> Result<DiscreteKernel> {
    if j > eig.count() {
        return Err(Error::RankExceeded {
            requested: j,
            bound: eig.count(),
        });
    }
    let grid = eig.grid().clone();
    let trunc = eig.trunc();
    let mn = grid.n() * trunc.m();
    if j == 0 {
        return DiscreteKernel::from_assembly(grid, trunc, DMatrix::zeros(mn, mn));
    }
    let flows = eig.stacked_flows().columns(0, j);
    let mut scaled = flows.into_owned();
    for (col, &lam) in eig.eigenvalues()[..j].iter().enumerate() {
        scaled.column_mut(col).scale_mut(lam);
    }
    let assembly = scaled * flows.transpose();
    DiscreteKernel::from_mirrored(grid, trunc, assembly)
}

/// Sweep the partial sums of an eigensystem against its kernel.
///
/// For every `J` in the (ascending) sweep the report carries the sup
/// trace-norm of the residual, the domination margin of the diagonal
/// residual blocks, and the excess of the partial-sum trace norms over the
/// Cauchy–Schwarz bound.
pub fn mercer_convergence_report(
    kernel: &DiscreteKernel,
    eig: &EigenSystem,
    j_values: &[usize],
) -> Result<MercerReport> {
    check_kernel_eig(kernel, eig)?;
    validate_sweep(j_values, eig.count())?;

    let n = kernel.grid().n();
    let diag_traces: Vec<f64> = (0..n).map(|k| kernel.diag_trace(k)).collect();
    let scale = diag_traces.iter().cloned().fold(0.0, f64::max);

    let mut residual_sup_trace = Vec::with_capacity(j_values.len());
    let mut diag_psd_min_eig = Vec::with_capacity(j_values.len());
    let mut diag_psd_worst_rel = Vec::with_capacity(j_values.len());
    let mut partial_sum_bound_excess = Vec::with_capacity(j_values.len());

    for &j in j_values {
        let partial = mercer_partial_sum(eig, j)?;
        let residual = kernel.assembly() - partial.assembly();

        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|k| (k..n).map(move |l| (k, l)))
            .collect();
        let stats: Vec<(f64, f64, Option<f64>)> = pairs
            .par_iter()
            .map(|&(k, l)| {
                let m = kernel.trunc().m();
                let res_block = residual.view((k * m, l * m), (m, m));
                let res_trace_norm = trace_norm(res_block);
                let part_block = partial.block(k, l);
                let bound = (diag_traces[k].max(0.0)).sqrt() * (diag_traces[l].max(0.0)).sqrt();
                let excess = trace_norm(part_block) - bound;
                let diag_min = if k == l {
                    let sym = res_block.into_owned();
                    Some(
                        SymmetricEigen::new(sym)
                            .eigenvalues
                            .iter()
                            .cloned()
                            .fold(f64::INFINITY, f64::min),
                    )
                } else {
                    None
                };
                (res_trace_norm, excess, diag_min)
            })
            .collect();

        let mut sup_res: f64 = 0.0;
        let mut max_excess = f64::NEG_INFINITY;
        let mut min_diag = f64::INFINITY;
        let mut worst_rel = f64::INFINITY;
        let mut diag_idx = 0;
        for (res_trace_norm, excess, diag_min) in stats {
            sup_res = sup_res.max(res_trace_norm);
            max_excess = max_excess.max(excess);
            if let Some(d) = diag_min {
                min_diag = min_diag.min(d);
                let denom = diag_traces[diag_idx].max(f64::MIN_POSITIVE);
                worst_rel = worst_rel.min(d / denom);
                diag_idx += 1;
            }
        }
        residual_sup_trace.push(sup_res);
        diag_psd_min_eig.push(min_diag);
        diag_psd_worst_rel.push(worst_rel);
        partial_sum_bound_excess.push(max_excess);
    }

    Ok(MercerReport {
        j_values: j_values.to_vec(),
        residual_sup_trace,
        diag_psd_min_eig,
        diag_psd_worst_rel,
        partial_sum_bound_excess,
        scale,
    })
}

/// Project a sample onto the leading `j` eigenflows:
/// `Σ_{r≤j} ⟨χ, Φ_r⟩ Φ_r` evaluated on the grid.
pub fn kl_truncate(sample: &FlowSample, eig: &EigenSystem, j: usize) -> Result<FlowSample> {
    if sample.grid() != eig.grid() || sample.trunc() != eig.trunc() {
        return Err(Error::GridMismatch);
    }
    if j > eig.count() {
        return Err(Error::RankExceeded {
            requested: j,
            bound: eig.count(),
        });
    }
    let grid = eig.grid();
    let x = sample.stack();
    let flows = eig.stacked_flows().columns(0, j);
    let scores = flows.tr_mul(&x) * grid.weight();
    let projected = flows * scores;
    crate::model::unstack(projected.as_slice(), grid, eig.trunc())
}

/// Pointwise truncation-error profile from the closed-form identity
/// `tr K(t,t) − Σ_{j≤J} λ_j ‖Φ_j(t)‖²`, swept over truncation levels.
pub fn uniform_mse_profile(
    kernel: &DiscreteKernel,
    eig: &EigenSystem,
    j_values: &[usize],
) -> Result<KlReport> {
    let (j_values, profiles, scale) = mse_profiles(kernel, eig, j_values)?;
    let mse_profile_sup = profiles
        .iter()
        .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(KlReport {
        j_values,
        mse_profile_sup,
        mc_mse_sup: None,
        mc_standard_error: None,
        mc_max_sigma_gap: None,
        scale,
    })
}

/// Same profile plus a Monte Carlo cross-check on fresh samples.
///
/// The fresh ensemble must be drawn from the law whose covariance is
/// `kernel`; each sample is truncated with the provided eigensystem and the
/// squared ambient-norm error is averaged per node. The report carries the
/// Monte Carlo sup, its standard error at the maximizing node, and the
/// worst pointwise deviation measured in standard errors.
pub fn uniform_mse_profile_with_mc(
    kernel: &DiscreteKernel,
    eig: &EigenSystem,
    j_values: &[usize],
    fresh: &FlowEnsemble,
) -> Result<KlReport> {
    if fresh.grid() != kernel.grid() || fresh.trunc() != kernel.trunc() {
        return Err(Error::GridMismatch);
    }
    let replicates = fresh.n_samples();
    if replicates < 2 {
        return Err(Error::param(
            "Monte Carlo cross-check needs at least two fresh samples",
        ));
    }
    let (j_values, profiles, scale) = mse_profiles(kernel, eig, j_values)?;

    let n = kernel.grid().n();
    let m = kernel.trunc().m();
    let w = kernel.grid().weight();
    let max_j = j_values.iter().cloned().max().unwrap_or(0);
    let flows = eig.stacked_flows().columns(0, max_j);
    let scores = fresh.data().tr_mul(&flows) * w; // replicates × max_j

    // walk the sweep, peeling one eigenflow at a time off the residual
    let mut residual = fresh.data().clone();
    let mut next_component = 0usize;
    let mut mc_sup = Vec::with_capacity(j_values.len());
    let mut mc_se = Vec::with_capacity(j_values.len());
    let mut max_sigma_gap: f64 = 0.0;

    for (sweep_idx, &j) in j_values.iter().enumerate() {
        while next_component < j {
            let phi = flows.column(next_component);
            let s = scores.column(next_component);
            // residual -= Φ_r · scoresᵀ (rank-1)
            for sample in 0..replicates {
                let c = s[sample];
                let mut col = residual.column_mut(sample);
                col.axpy(-c, &phi, 1.0);
            }
            next_component += 1;
        }
        let mut sup_mean = f64::NEG_INFINITY;
        let mut se_at_sup = 0.0;
        for k in 0..n {
            let block = residual.rows(k * m, m);
            let mut mean = 0.0;
            let mut sq = Vec::with_capacity(replicates);
            for sample in 0..replicates {
                let v: f64 = block.column(sample).iter().map(|x| x * x).sum();
                mean += v;
                sq.push(v);
            }
            mean /= replicates as f64;
            let var = sq
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (replicates as f64 - 1.0);
            let se = (var / replicates as f64).sqrt();
            if mean > sup_mean {
                sup_mean = mean;
                se_at_sup = se;
            }
            let closed = profiles[sweep_idx][k];
            let dev = (closed - mean).abs();
            if dev > 1e-12 * scale.max(1.0) {
                max_sigma_gap = max_sigma_gap.max(dev / se.max(f64::MIN_POSITIVE));
            }
        }
        mc_sup.push(sup_mean);
        mc_se.push(se_at_sup);
    }

    let mse_profile_sup = profiles
        .iter()
        .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(KlReport {
        j_values,
        mse_profile_sup,
        mc_mse_sup: Some(mc_sup),
        mc_standard_error: Some(mc_se),
        mc_max_sigma_gap: Some(max_sigma_gap),
        scale,
    })
}

fn mse_profiles(
    kernel: &DiscreteKernel,
    eig: &EigenSystem,
    j_values: &[usize],
) -> Result<(Vec<usize>, Vec<Vec<f64>>, f64)> {
    check_kernel_eig(kernel, eig)?;
    validate_sweep(j_values, eig.count())?;
    let n = kernel.grid().n();
    let diag: Vec<f64> = (0..n).map(|k| kernel.diag_trace(k)).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);

    let mut cum = vec![0.0f64; n];
    let mut next_component = 0usize;
    let mut profiles = Vec::with_capacity(j_values.len());
    for &j in j_values {
        while next_component < j {
            let lam = eig.eigenvalue(next_component);
            for (k, c) in cum.iter_mut().enumerate() {
                *c += lam * eig.flow_node_norm_sq(next_component, k);
            }
            next_component += 1;
        }
        profiles.push((0..n).map(|k| diag[k] - cum[k]).collect());
    }
    Ok((j_values.to_vec(), profiles, scale))
}

/// Empirical global truncation error of the expansion basis:
/// `mean_j ‖χ_j − Σ_{r≤J} ⟨χ_j, Φ_r⟩ Φ_r‖²` via the Pythagoras identity.
pub fn global_truncation_mse(ens: &FlowEnsemble, eig: &EigenSystem, j: usize) -> Result<f64> {
    if j > eig.count() {
        return Err(Error::RankExceeded {
            requested: j,
            bound: eig.count(),
        });
    }
    let truncated = eig.leading(j)?;
    let scores = compute_scores(ens, &truncated)?;
    let total = mean_sq_norm(ens);
    let captured: f64 = (0..j)
        .map(|r| {
            scores.values().column(r).iter().map(|x| x * x).sum::<f64>()
                / ens.n_samples().max(1) as f64
        })
        .sum();
    Ok(total - captured)
}

/// Global truncation error of the best `j` elements (by explained energy)
/// of an arbitrary quadrature-orthonormal family.
pub fn projection_mse(ens: &FlowEnsemble, basis: &[FlowSample], j: usize) -> Result<f64> {
    if j > basis.len() {
        return Err(Error::RankExceeded {
            requested: j,
            bound: basis.len(),
        });
    }
    let dev = crate::generators::gram_deviation(basis)?;
    if dev > tol::QUADRATURE_ORTHONORMALITY {
        return Err(Error::NotOrthonormal {
            deviation: dev,
            tolerance: tol::QUADRATURE_ORTHONORMALITY,
        });
    }
    let w = ens.grid().weight();
    let n_samples = ens.n_samples().max(1) as f64;
    let mut energies: Vec<f64> = Vec::with_capacity(basis.len());
    for b in basis {
        if b.grid() != ens.grid() || b.trunc() != ens.trunc() {
            return Err(Error::GridMismatch);
        }
        let stacked = b.stack();
        let scores = ens.data().tr_mul(&stacked) * w;
        energies.push(scores.iter().map(|x| x * x).sum::<f64>() / n_samples);
    }
    energies.sort_by(|a, b| b.partial_cmp(a).expect("finite energies"));
    let captured: f64 = energies[..j].iter().sum();
    Ok(mean_sq_norm(ens) - captured)
}

/// The full rank-one product family `β_r(t)·e_i` built from the scalar
/// autocovariance eigenfunctions, ordered temporal-major. Quadrature
/// orthonormal; feed to [`projection_mse`] for energy-ranked truncation.
pub fn scalar_product_basis(ens: &FlowEnsemble) -> Result<Vec<FlowSample>> {
    let c = scalar_autocovariance(ens)?;
    let op = c.to_operator_kernel();
    let n = ens.grid().n();
    let temporal = naive_eigendecomposition(&op, n)?;
    let m = ens.trunc().m();
    let mut out = Vec::with_capacity(n * m);
    for r in 0..n {
        let beta = temporal.eigenflow(r);
        for i in 0..m {
            let coeffs = DMatrix::from_fn(n, m, |k, col| {
                if col == i {
                    beta.coeffs()[(k, 0)]
                } else {
                    0.0
                }
            });
            out.push(FlowSample::new(ens.grid().clone(), ens.trunc(), coeffs)?);
        }
    }
    Ok(out)
}

/// Temporal Fourier functions tensored with the ambient basis directions,
/// re-orthonormalized under the grid quadrature.
pub fn fourier_tensor_basis(
    grid: &Grid,
    trunc: BasisTruncation,
    count: usize,
) -> Result<Vec<FlowSample>> {
    let n = grid.n();
    let m = trunc.m();
    if count > n * m {
        return Err(Error::RankExceeded {
            requested: count,
            bound: n * m,
        });
    }
    let l = grid.domain_length();
    // oversample the frequencies: near the Nyquist rate one of the two
    // phases can vanish on the midpoint grid, and Gram-Schmidt drops the
    // dependent candidates below
    let mut temporal: Vec<DVector<f64>> = Vec::with_capacity(2 * n);
    temporal.push(DVector::from_element(n, (1.0 / l).sqrt()));
    let mut q = 1usize;
    while temporal.len() < 2 * n {
        let omega = 2.0 * std::f64::consts::PI * q as f64 / l;
        let norm = (2.0 / l).sqrt();
        temporal.push(DVector::from_fn(n, |k, _| norm * (omega * grid.node(k)).cos()));
        temporal.push(DVector::from_fn(n, |k, _| norm * (omega * grid.node(k)).sin()));
        q += 1;
    }
    let mut products = Vec::with_capacity(n * m);
    for f in &temporal {
        for i in 0..m {
            let coeffs = DMatrix::from_fn(n, m, |k, col| if col == i { f[k] } else { 0.0 });
            products.push(FlowSample::new(grid.clone(), trunc, coeffs)?);
        }
    }
    let ortho = orthonormalize_skipping(&products, tol::ORTHONORMALIZE_PIVOT_RATIO)?;
    if ortho.len() < count {
        return Err(Error::param(format!(
            "grid supports only {} independent tensor elements, {} requested",
            ortho.len(),
            count
        )));
    }
    Ok(ortho.into_iter().take(count).collect())
}

/// Global truncation error of the expansion basis versus the rank-one
/// product expansion built from the scalar autocovariance.
#[derive(Debug, Clone, Serialize)]
pub struct ScalarComparisonReport {
    pub operator_kl_global_mse: f64,
    pub scalar_basis_global_mse: f64,
    pub component_count: usize,
}

/// Compare the expansion basis against the scalar-kernel product basis at
/// equal component count.
///
/// The operator side truncates with the leading `j` eigenflows of the
/// empirical operator kernel; the scalar side projects onto the `j` highest
/// energy products `β_r(t)·e_i` of scalar-kernel eigenfunctions and ambient
/// directions. The operator error never exceeds the scalar error beyond
/// rounding ([`tol::OPTIMALITY_MARGIN`]).
pub fn scalar_comparison(ens: &FlowEnsemble, j: usize) -> Result<ScalarComparisonReport> {
    let bound = ens.stacked_dim().min(ens.n_samples());
    if j > bound {
        return Err(Error::RankExceeded {
            requested: j,
            bound,
        });
    }
    let kernel = empirical_operator_kernel(ens)?;
    let eig = naive_eigendecomposition(&kernel, j)?;
    let operator_mse = global_truncation_mse(ens, &eig, j)?;
    let products = scalar_product_basis(ens)?;
    let scalar_mse = projection_mse(ens, &products, j)?;
    Ok(ScalarComparisonReport {
        operator_kl_global_mse: operator_mse,
        scalar_basis_global_mse: scalar_mse,
        component_count: j,
    })
}

fn mean_sq_norm(ens: &FlowEnsemble) -> f64 {
    let w = ens.grid().weight();
    let n_samples = ens.n_samples().max(1) as f64;
    w * ens.data().iter().map(|x| x * x).sum::<f64>() / n_samples
}

fn check_kernel_eig(kernel: &DiscreteKernel, eig: &EigenSystem) -> Result<()> {
    if kernel.grid() != eig.grid() || kernel.trunc() != eig.trunc() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn validate_sweep(j_values: &[usize], count: usize) -> Result<()> {
    if j_values.is_empty() {
        return Err(Error::param("truncation sweep is empty"));
    }
    for pair in j_values.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::param("truncation sweep must be strictly ascending"));
        }
    }
    let &max = j_values.last().expect("nonempty");
    if max > count {
        return Err(Error::RankExceeded {
            requested: max,
            bound: count,
        });
    }
    Ok(())
}

/// Sum of singular values of a block.
fn trace_norm(block: DMatrixView<'_, f64>) -> f64 {
    if block.nrows() == 1 && block.ncols() == 1 {
        return block[(0, 0)].abs();
    }
    SVD::new(block.into_owned(), false, false)
        .singular_values
        .iter()
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{
        brownian_discrete_eigenvalue, brownian_eigenfunction, generate_finite_rank,
        orthonormalize, CoefficientLaw, FiniteRankSpec, SeparableBrownianSpec,
    };
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid(n: usize) -> Grid {
        Grid::unit(n).unwrap()
    }

    fn m(mm: usize) -> BasisTruncation {
        BasisTruncation::new(mm).unwrap()
    }

    fn random_ensemble(n: usize, mm: usize, n_samples: usize, seed: u64) -> FlowEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n * mm, n_samples, |_, _| rng.sample(StandardNormal));
        FlowEnsemble::new(grid(n), m(mm), data).unwrap()
    }

    #[test]
    fn partial_sum_at_zero_is_the_zero_kernel() {
        let ens = random_ensemble(4, 2, 6, 1);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 6).unwrap();
        let zero = mercer_partial_sum(&eig, 0).unwrap();
        assert!(zero.assembly().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn full_rank_partial_sum_reproduces_the_kernel() {
        let ens = random_ensemble(4, 2, 12, 2);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 8).unwrap();
        let full = mercer_partial_sum(&eig, 8).unwrap();
        let scale = kernel.diag_trace_sup();
        let n = kernel.grid().n();
        for k in 0..n {
            for l in 0..n {
                let diff = kernel.block(k, l) - full.block(k, l);
                let tn = trace_norm(diff.view((0, 0), diff.shape()));
                assert!(tn <= 1e-10 * scale, "block ({k},{l}) residual {tn}");
            }
        }
    }

    #[test]
    fn rank_one_kernel_is_reproduced_at_j_equals_one() {
        let g = grid(5);
        let t = m(1);
        let phi = orthonormalize(&[FlowSample::from_fn(g.clone(), t, |tk, _| 1.0 + tk)])
            .unwrap()
            .remove(0);
        let spec = FiniteRankSpec::new(vec![2.0], vec![phi], CoefficientLaw::Gaussian, 0).unwrap();
        let kernel = spec.population_kernel().unwrap();
        let eig = naive_eigendecomposition(&kernel, 1).unwrap();
        let rebuilt = mercer_partial_sum(&eig, 1).unwrap();
        let dev = (kernel.assembly() - rebuilt.assembly()).abs().max();
        assert!(dev < 1e-12);
    }

    #[test]
    fn convergence_report_is_monotone_and_dominated() {
        let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 8, 0).unwrap();
        let g = grid(16);
        let kernel = spec.truncated_population_kernel(&g).unwrap();
        let eig = naive_eigendecomposition(&kernel, 32).unwrap();
        let sweep = [1, 2, 4, 8, 16, 32];
        let report = mercer_convergence_report(&kernel, &eig, &sweep).unwrap();
        for w in report.residual_sup_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * report.scale);
        }
        let last = *report.residual_sup_trace.last().unwrap();
        assert!(last <= 1e-10 * report.scale, "full-rank residual {last}");
        for rel in &report.diag_psd_worst_rel {
            assert!(*rel >= -1e-10);
        }
        for excess in &report.partial_sum_bound_excess {
            assert!(*excess <= tol::PARTIAL_SUM_BOUND);
        }
    }

    #[test]
    fn analytic_tail_matches_residual_for_the_modal_kernel() {
        // the modal kernel has closed-form eigenpairs, so the residual after
        // the top J can be evaluated directly from the discarded modes
        let mu = [1.0, 0.5];
        let spec = SeparableBrownianSpec::new(mu.to_vec(), 4, 0).unwrap();
        let g = grid(24);
        let kernel = spec.truncated_population_kernel(&g).unwrap();
        let eig = naive_eigendecomposition(&kernel, 8).unwrap();
        let j = 4; // cut at a healthy spectral gap
        let report = mercer_convergence_report(&kernel, &eig, &[j]).unwrap();

        // brute-force tail: keep the (temporal, ambient) modes sorted by
        // λ_jᵐᵒᵈᵃˡ·μ_i and sum the discarded ones per node pair
        let mut modes: Vec<(f64, usize, usize)> = Vec::new();
        for jt in 1..=4 {
            for (i, &mui) in mu.iter().enumerate() {
                modes.push((
                    crate::generators::brownian_eigenvalue(jt, 1.0) * mui,
                    jt,
                    i,
                ));
            }
        }
        modes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let discarded = &modes[j..];
        let n = g.n();
        let mut sup = 0.0f64;
        for k in 0..n {
            for l in 0..n {
                // residual block is diagonal in the ambient basis
                let mut tn = 0.0;
                for i in 0..mu.len() {
                    let mut entry = 0.0;
                    for &(lam, jt, mi) in discarded {
                        if mi == i {
                            entry += lam
                                * brownian_eigenfunction(jt, g.node(k), 1.0)
                                * brownian_eigenfunction(jt, g.node(l), 1.0);
                        }
                    }
                    tn += entry.abs();
                }
                sup = sup.max(tn);
            }
        }
        assert_abs_diff_eq!(report.residual_sup_trace[0], sup, epsilon = 1e-8);
    }

    #[test]
    fn truncate_fixes_basis_elements_and_projects() {
        let ens = random_ensemble(6, 2, 10, 3);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 10).unwrap();

        let phi0 = eig.eigenflow(0);
        let back = kl_truncate(&phi0, &eig, 3).unwrap();
        let dev = (phi0.coeffs() - back.coeffs()).abs().max();
        assert!(dev < 1e-12);

        let zero = kl_truncate(&phi0, &eig, 0).unwrap();
        assert!(zero.coeffs().iter().all(|x| *x == 0.0));

        // idempotence
        let sample = ens.sample(0);
        let once = kl_truncate(&sample, &eig, 4).unwrap();
        let twice = kl_truncate(&once, &eig, 4).unwrap();
        let dev = (once.coeffs() - twice.coeffs()).abs().max();
        assert!(dev < 1e-11);
    }

    #[test]
    fn finite_rank_samples_reconstruct_exactly() {
        let g = grid(8);
        let t = m(2);
        let raw: Vec<FlowSample> = (1..=3)
            .map(|r| FlowSample::from_fn(g.clone(), t, |tk, i| (r as f64 * tk + i as f64).sin()))
            .collect();
        let flows = orthonormalize(&raw).unwrap();
        let spec =
            FiniteRankSpec::new(vec![1.0, 0.6, 0.3], flows, CoefficientLaw::Gaussian, 5).unwrap();
        let ens = generate_finite_rank(&spec, 20).unwrap();
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 3).unwrap();
        for jdx in 0..5 {
            let sample = ens.sample(jdx);
            let rebuilt = kl_truncate(&sample, &eig, 3).unwrap();
            let dev = (sample.coeffs() - rebuilt.coeffs()).abs().max();
            assert!(dev < 1e-10, "sample {jdx} deviation {dev}");
        }
    }

    #[test]
    fn profile_vanishes_at_full_rank() {
        let ens = random_ensemble(5, 2, 14, 4);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 10).unwrap();
        let report = uniform_mse_profile(&kernel, &eig, &[2, 10]).unwrap();
        assert!(report.mse_profile_sup[1] <= 1e-10 * report.scale);
        assert!(report.mse_profile_sup[0] >= -1e-10 * report.scale);
        assert!(report.mse_profile_sup[1] <= report.mse_profile_sup[0] + 1e-12);
    }

    #[test]
    fn brownian_profile_matches_the_closed_form() {
        // m = 1 Brownian kernel: the discretized eigensystem is known in
        // closed form, so the identity profile can be written down directly
        let spec = SeparableBrownianSpec::new(vec![1.0], 1, 0).unwrap();
        let g = grid(64);
        let kernel = spec.population_kernel(&g).unwrap();
        let eig = naive_eigendecomposition(&kernel, 64).unwrap();
        let sweep = [1, 2, 4, 8];
        let report = uniform_mse_profile(&kernel, &eig, &sweep).unwrap();
        for (idx, &j) in sweep.iter().enumerate() {
            let mut sup = f64::NEG_INFINITY;
            for k in 0..g.n() {
                let t = g.node(k);
                let mut p = t; // tr K(t,t) = min(t,t)
                for jj in 1..=j {
                    let lam = brownian_discrete_eigenvalue(jj, &g);
                    let phi = brownian_eigenfunction(jj, t, 1.0);
                    p -= lam * phi * phi;
                }
                sup = sup.max(p);
            }
            assert_abs_diff_eq!(report.mse_profile_sup[idx], sup, epsilon = 1e-10);
        }
    }

    #[test]
    fn mc_cross_check_agrees_with_the_identity() {
        let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 6, 99).unwrap();
        let g = grid(16);
        let t = m(2);
        let kernel = spec.truncated_population_kernel(&g).unwrap();
        let eig = naive_eigendecomposition(&kernel, 12).unwrap();
        let fresh = crate::generators::generate_separable_brownian(&spec, &g, t, 4000).unwrap();
        let report = uniform_mse_profile_with_mc(&kernel, &eig, &[1, 2, 4], &fresh).unwrap();
        let gap = report.mc_max_sigma_gap.unwrap();
        assert!(gap <= tol::MC_SIGMA_FACTOR, "sigma gap {gap}");
        let sups = report.mc_mse_sup.unwrap();
        for w in sups.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn exactly_separable_ensemble_gives_equal_energies() {
        // samples are scaled products themselves, so the empirical kernel
        // factorizes and both expansions capture identical energy
        let g = grid(8);
        let t = m(2);
        let temporal: Vec<FlowSample> = (1..=3)
            .map(|r| FlowSample::from_fn(g.clone(), m(1), |tk, _| (r as f64 * tk).cos() + tk))
            .collect();
        let beta = orthonormalize(&temporal).unwrap();
        let mut samples = Vec::new();
        let mut weight_idx = 0;
        for b in &beta {
            for i in 0..2 {
                let c = [2.0, 1.3, 0.9, 0.55, 0.3, 0.15][weight_idx];
                weight_idx += 1;
                let coeffs = DMatrix::from_fn(8, 2, |k, col| {
                    if col == i {
                        c * b.coeffs()[(k, 0)]
                    } else {
                        0.0
                    }
                });
                samples.push(FlowSample::new(g.clone(), t, coeffs).unwrap());
            }
        }
        let ens = FlowEnsemble::from_samples(&samples).unwrap();
        for j in [1, 2, 4] {
            let report = scalar_comparison(&ens, j).unwrap();
            assert!(
                (report.operator_kl_global_mse - report.scalar_basis_global_mse).abs() <= 1e-8,
                "J = {j}: {} vs {}",
                report.operator_kl_global_mse,
                report.scalar_basis_global_mse
            );
        }
    }

    #[test]
    fn planted_non_separable_kernel_favors_the_operator_basis() {
        // rotate two product flows into each other so temporal and ambient
        // structure mix; a rank-one product basis cannot track the mixture
        let g = grid(10);
        let t = m(2);
        let a = FlowSample::from_fn(g.clone(), t, |tk, i| {
            if i == 0 {
                (std::f64::consts::PI * tk).sin()
            } else {
                0.0
            }
        });
        let b = FlowSample::from_fn(g.clone(), t, |tk, i| {
            if i == 1 {
                (2.0 * std::f64::consts::PI * tk).cos()
            } else {
                0.0
            }
        });
        let ortho = orthonormalize(&[a, b]).unwrap();
        let theta: f64 = 0.9;
        let mixed1 = ortho[0]
            .scaled(theta.cos())
            .add_scaled(theta.sin(), &ortho[1])
            .unwrap();
        let mixed2 = ortho[0]
            .scaled(-theta.sin())
            .add_scaled(theta.cos(), &ortho[1])
            .unwrap();
        let spec = FiniteRankSpec::new(
            vec![1.0, 0.35],
            vec![mixed1, mixed2],
            CoefficientLaw::Gaussian,
            31,
        )
        .unwrap();
        let ens = generate_finite_rank(&spec, 120).unwrap();
        let report = scalar_comparison(&ens, 1).unwrap();

        // brute-force oracle for the operator side: explicit truncation and
        // residual norms instead of the Pythagoras shortcut
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 1).unwrap();
        let n_samples = ens.n_samples();
        let mut direct_operator = 0.0;
        for jdx in 0..n_samples {
            let s = ens.sample(jdx);
            let truncated = kl_truncate(&s, &eig, 1).unwrap();
            direct_operator += s.add_scaled(-1.0, &truncated).unwrap().norm_sq();
        }
        direct_operator /= n_samples as f64;
        assert_abs_diff_eq!(
            report.operator_kl_global_mse,
            direct_operator,
            epsilon = 1e-10
        );

        // brute-force oracle for the scalar side: project every sample onto
        // every candidate product and keep the best single one
        let products = scalar_product_basis(&ens).unwrap();
        let mut best = f64::INFINITY;
        for p in &products {
            let mut resid = 0.0;
            for jdx in 0..n_samples {
                let s = ens.sample(jdx);
                let c = s.inner(p).unwrap();
                resid += s.add_scaled(-c, p).unwrap().norm_sq();
            }
            best = best.min(resid / n_samples as f64);
        }
        assert_abs_diff_eq!(report.scalar_basis_global_mse, best, epsilon = 1e-10);

        // the mixing makes the operator path strictly better at J = 1
        assert!(
            report.operator_kl_global_mse < report.scalar_basis_global_mse - 1e-3,
            "expected a strict margin: {} vs {}",
            report.operator_kl_global_mse,
            report.scalar_basis_global_mse
        );
        assert!(
            report.operator_kl_global_mse
                <= report.scalar_basis_global_mse + tol::OPTIMALITY_MARGIN
        );
    }

    #[test]
    fn full_product_basis_captures_everything() {
        let ens = random_ensemble(4, 2, 16, 8);
        let report = scalar_comparison(&ens, 8).unwrap();
        assert!(report.operator_kl_global_mse.abs() <= 1e-10);
        assert!(report.scalar_basis_global_mse.abs() <= 1e-10);
    }

    #[test]
    fn fourier_tensor_basis_is_orthonormal() {
        let g = grid(12);
        let t = m(2);
        let basis = fourier_tensor_basis(&g, t, 10).unwrap();
        assert_eq!(basis.len(), 10);
        let dev = crate::generators::gram_deviation(&basis).unwrap();
        assert!(dev < 1e-10);
    }

    #[test]
    fn expansion_beats_fourier_tensor_basis() {
        let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 8, 12).unwrap();
        let g = grid(12);
        let t = m(2);
        let ens = crate::generators::generate_separable_brownian(&spec, &g, t, 150).unwrap();
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 6).unwrap();
        let fourier = fourier_tensor_basis(&g, t, 24).unwrap();
        for j in [1, 3, 6] {
            let kl = global_truncation_mse(&ens, &eig, j).unwrap();
            let alt = projection_mse(&ens, &fourier, j).unwrap();
            assert!(
                kl <= alt + tol::OPTIMALITY_MARGIN,
                "J = {j}: expansion {kl} vs fourier {alt}"
            );
        }
    }

    #[test]
    fn weighted_node_energies_recover_the_trace() {
        // Σ_j λ_j ‖Φ_j(t_k)‖² summed over nodes with weight w equals Σ_j λ_j,
        // the discrete exchange of trace and quadrature
        let ens = random_ensemble(6, 2, 20, 21);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 12).unwrap();
        let total: f64 = eig.eigenvalues().iter().sum();
        let w = kernel.grid().weight();
        let mut acc = 0.0;
        for k in 0..kernel.grid().n() {
            for j in 0..eig.count() {
                acc += eig.eigenvalue(j) * eig.flow_node_norm_sq(j, k);
            }
        }
        acc *= w;
        assert_abs_diff_eq!(acc, total, epsilon = 1e-12 * total.max(1.0));
    }

    #[test]
    fn sweep_validation() {
        let ens = random_ensemble(4, 1, 6, 2);
        let kernel = empirical_operator_kernel(&ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, 4).unwrap();
        assert!(mercer_convergence_report(&kernel, &eig, &[]).is_err());
        assert!(mercer_convergence_report(&kernel, &eig, &[2, 2]).is_err());
        assert!(mercer_convergence_report(&kernel, &eig, &[1, 5]).is_err());
        assert!(matches!(
            mercer_partial_sum(&eig, 9),
            Err(Error::RankExceeded { .. })
        ));
    }
}
