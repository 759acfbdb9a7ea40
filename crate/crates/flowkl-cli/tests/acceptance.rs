//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with the measured values (visible with `-- --nocapture`).
//!
//! The tests serialize on a global lock so the timed criteria are not
//! distorted by the others running concurrently.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use flowkl::covariance::{empirical_operator_kernel, trace_identity};
use flowkl::diagnostics::{
    fourier_tensor_basis, global_truncation_mse, mercer_convergence_report, projection_mse,
    scalar_comparison, uniform_mse_profile_with_mc,
};
use flowkl::generators::{
    brownian_eigenfunction, brownian_eigenvalue, generate_finite_rank,
    generate_separable_brownian, orthonormalize, CoefficientLaw, FiniteRankSpec,
    SeparableBrownianSpec,
};
use flowkl::spectral::{compute_scores, cross_validate_paths, naive_eigendecomposition};
use flowkl::{BasisTruncation, FlowEnsemble, FlowSample, Grid};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poison| poison.into_inner())
}

fn random_ensemble(n: usize, m: usize, n_samples: usize, seed: u64) -> FlowEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::unit(n).unwrap();
    let trunc = BasisTruncation::new(m).unwrap();
    let data = DMatrix::from_fn(n * m, n_samples, |_, _| rng.sample(StandardNormal));
    FlowEnsemble::new(grid, trunc, data).unwrap()
}

#[test]
fn c01_path_equivalence() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_rel: f64 = 0.0;
    let mut worst_align: f64 = 1.0;
    for trial in 0..20 {
        let m = [1usize, 2, 4, 8][rng.random_range(0..4)];
        let n = rng.random_range(4..=(512 / m));
        let n_samples = rng.random_range(4..=512);
        let ens = random_ensemble(n, m, n_samples, 9000 + trial);
        let j = (n * m).min(n_samples);
        let report = cross_validate_paths(&ens, j, 1e-6).unwrap();
        worst_rel = worst_rel.max(report.max_eigval_rel_err);
        worst_align = worst_align.min(report.min_abs_alignment);
        assert!(
            report.max_eigval_rel_err <= 1e-10,
            "trial {trial} (mn = {}, N = {n_samples}): eigenvalue discrepancy {}",
            n * m,
            report.max_eigval_rel_err
        );
        assert!(
            report.min_abs_alignment >= 1.0 - 1e-8,
            "trial {trial}: alignment {}",
            report.min_abs_alignment
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "path equivalence took {elapsed:.1} s");
    println!(
        "[PASS] C1 path equivalence: 20 ensembles, worst rel err {worst_rel:.3e}, \
         worst alignment 1-{:.3e}, {elapsed:.1} s",
        1.0 - worst_align
    );
}

#[test]
fn c02_brownian_spectrum_recovery() {
    let _guard = serial();
    let start = Instant::now();
    let spec = SeparableBrownianSpec::new(vec![1.0], 1, 0).unwrap();
    let grid = Grid::unit(256).unwrap();
    let kernel = spec.population_kernel(&grid).unwrap();
    let eig = naive_eigendecomposition(&kernel, 5).unwrap();

    let lam1 = 4.0 / (PI * PI);
    let rel1 = (eig.eigenvalue(0) - lam1).abs() / lam1;
    assert!(rel1 <= 1e-3, "leading eigenvalue off by {rel1:.3e}");
    let mut worst = rel1;
    for j in 1..=5 {
        let analytic = brownian_eigenvalue(j, 1.0);
        let rel = (eig.eigenvalue(j - 1) - analytic).abs() / analytic;
        worst = worst.max(rel);
        assert!(rel <= 1e-2, "eigenvalue {j} off by {rel:.3e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "spectrum recovery took {elapsed:.1} s");
    println!(
        "[PASS] C2 Brownian spectrum: λ̂₁ rel err {rel1:.3e}, worst of first five {worst:.3e}, \
         {elapsed:.2} s"
    );
}

#[test]
fn c03_trace_identity() {
    let _guard = serial();
    // full-rank decompositions agree to 1e-12 relative
    let mut worst_rel: f64 = 0.0;
    let ens = random_ensemble(12, 4, 96, 33);
    let kernel = empirical_operator_kernel(&ens).unwrap();
    let eig = naive_eigendecomposition(&kernel, 48).unwrap();
    let report = trace_identity(&kernel, &eig).unwrap();
    worst_rel = worst_rel.max(report.rel_err);
    assert!(report.rel_err <= 1e-12);

    // the analytic separable kernel: ∫ tr K(s,s) ds = (Σμ)/2 on [0,1]
    let mu = vec![1.0, 0.5, 0.25];
    let mu_sum: f64 = mu.iter().sum();
    let spec = SeparableBrownianSpec::new(mu, 4, 0).unwrap();
    for n in [64, 128, 256] {
        let grid = Grid::unit(n).unwrap();
        let target = spec.population_kernel(&grid).unwrap();
        let eig = naive_eigendecomposition(&target, 3 * n).unwrap();
        let report = trace_identity(&target, &eig).unwrap();
        worst_rel = worst_rel.max(report.rel_err);
        assert!(report.rel_err <= 1e-12, "n = {n}: rel err {}", report.rel_err);
        let analytic = mu_sum / 2.0;
        let dev = (report.rhs - analytic).abs();
        assert!(dev <= 2.0 / n as f64, "n = {n}: quadrature trace off by {dev:.3e}");
    }
    println!("[PASS] C3 trace identity: worst full-rank rel err {worst_rel:.3e}");
}

#[test]
fn c04_domination_and_trace_norm_bound() {
    let _guard = serial();
    let mut cases: Vec<(&str, flowkl::DiscreteKernel)> = Vec::new();
    let ens = random_ensemble(8, 3, 60, 44);
    cases.push(("empirical", empirical_operator_kernel(&ens).unwrap()));
    let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 8, 0).unwrap();
    let grid = Grid::unit(16).unwrap();
    cases.push(("modal", spec.truncated_population_kernel(&grid).unwrap()));

    let mut worst_dom = f64::INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    for (name, kernel) in &cases {
        let mn = kernel.grid().n() * kernel.trunc().m();
        let eig = naive_eigendecomposition(kernel, mn).unwrap();
        let sweep: Vec<usize> = (1..=mn).collect();
        let report = mercer_convergence_report(kernel, &eig, &sweep).unwrap();
        for (idx, j) in sweep.iter().enumerate() {
            assert!(
                report.diag_psd_worst_rel[idx] >= -1e-10,
                "{name}: domination violated at J = {j}: {}",
                report.diag_psd_worst_rel[idx]
            );
            assert!(
                report.partial_sum_bound_excess[idx] <= 1e-10,
                "{name}: trace-norm bound violated at J = {j}: {}",
                report.partial_sum_bound_excess[idx]
            );
            worst_dom = worst_dom.min(report.diag_psd_worst_rel[idx]);
            worst_excess = worst_excess.max(report.partial_sum_bound_excess[idx]);
        }
    }
    println!(
        "[PASS] C4 domination: worst diagonal margin {worst_dom:.3e}, \
         worst trace-norm excess {worst_excess:.3e}"
    );
}

#[test]
fn c05_uniform_convergence_with_analytic_tail() {
    let _guard = serial();
    let mu = [1.0, 0.5];
    let spec = SeparableBrownianSpec::new(mu.to_vec(), 8, 0).unwrap();
    let grid = Grid::unit(32).unwrap();
    let kernel = spec.truncated_population_kernel(&grid).unwrap();
    let eig = naive_eigendecomposition(&kernel, 64).unwrap();
    let sweep = [1, 2, 4, 8, 16, 64];
    let report = mercer_convergence_report(&kernel, &eig, &sweep).unwrap();

    for w in report.residual_sup_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * report.scale, "residual not monotone");
    }
    let last = *report.residual_sup_trace.last().unwrap();
    assert!(last <= 1e-10 * report.scale, "full-rank residual {last:.3e}");

    // analytic tail at J = 4, evaluated from the discarded modes directly
    let j = 4;
    let mut modes: Vec<(f64, usize, usize)> = Vec::new();
    for jt in 1..=8 {
        for (i, &mui) in mu.iter().enumerate() {
            modes.push((brownian_eigenvalue(jt, 1.0) * mui, jt, i));
        }
    }
    modes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let discarded = &modes[j..];
    let mut tail_sup = 0.0f64;
    for k in 0..grid.n() {
        for l in 0..grid.n() {
            let mut tn = 0.0;
            for i in 0..mu.len() {
                let mut entry = 0.0;
                for &(lam, jt, mi) in discarded {
                    if mi == i {
                        entry += lam
                            * brownian_eigenfunction(jt, grid.node(k), 1.0)
                            * brownian_eigenfunction(jt, grid.node(l), 1.0);
                    }
                }
                tn += entry.abs();
            }
            tail_sup = tail_sup.max(tn);
        }
    }
    let report_j = mercer_convergence_report(&kernel, &eig, &[j]).unwrap();
    let dev = (report_j.residual_sup_trace[0] - tail_sup).abs();
    assert!(dev <= 1e-8, "residual vs analytic tail: {dev:.3e}");
    println!(
        "[PASS] C5 uniform convergence: full-rank residual {last:.3e}, \
         analytic tail deviation {dev:.3e}"
    );
}

#[test]
fn c06_truncation_error_identity_with_monte_carlo() {
    let _guard = serial();
    let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 6, 606).unwrap();
    let grid = Grid::unit(32).unwrap();
    let trunc = BasisTruncation::new(2).unwrap();
    let kernel = spec.truncated_population_kernel(&grid).unwrap();
    let eig = naive_eigendecomposition(&kernel, 64).unwrap();
    let fresh = generate_separable_brownian(&spec, &grid, trunc, 10_000).unwrap();
    let sweep = [1, 2, 4, 8, 12];
    let report = uniform_mse_profile_with_mc(&kernel, &eig, &sweep, &fresh).unwrap();

    let gap = report.mc_max_sigma_gap.unwrap();
    assert!(gap <= 4.0, "Monte Carlo deviation {gap:.2} standard errors");
    for w in report.mse_profile_sup.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * report.scale, "profile not monotone");
    }
    println!(
        "[PASS] C6 truncation-error identity: worst MC deviation {gap:.2}σ over sweep {:?}",
        sweep
    );
}

#[test]
fn c07_score_structure() {
    let _guard = serial();
    let ens = random_ensemble(8, 4, 100, 77).centered();
    let kernel = empirical_operator_kernel(&ens).unwrap();
    let eig = naive_eigendecomposition(&kernel, 32).unwrap();
    let scores = compute_scores(&ens, &eig).unwrap();
    let moment = scores.second_moment();
    let mut worst: f64 = 0.0;
    for a in 0..32 {
        for b in 0..32 {
            let target = if a == b { eig.eigenvalue(a) } else { 0.0 };
            let dev = (moment[(a, b)] - target).abs();
            worst = worst.max(dev);
            assert!(
                dev <= 1e-10,
                "score covariance entry ({a},{b}) deviates by {dev:.3e}"
            );
        }
    }
    println!("[PASS] C7 score structure: covariance = diag(λ), worst deviation {worst:.3e}");
}

#[test]
fn c08_optimality_against_alternative_bases() {
    let _guard = serial();
    let margin = 1e-10;

    // separable ensemble
    let spec = SeparableBrownianSpec::new(vec![1.0, 0.5], 8, 808).unwrap();
    let grid = Grid::unit(16).unwrap();
    let trunc = BasisTruncation::new(2).unwrap();
    let separable = generate_separable_brownian(&spec, &grid, trunc, 300).unwrap();

    // planted non-separable ensemble: rotated product flows
    let g10 = Grid::unit(10).unwrap();
    let t2 = BasisTruncation::new(2).unwrap();
    let a = FlowSample::from_fn(g10.clone(), t2, |t, i| {
        if i == 0 {
            (PI * t).sin()
        } else {
            0.0
        }
    });
    let b = FlowSample::from_fn(g10.clone(), t2, |t, i| {
        if i == 1 {
            (2.0 * PI * t).cos()
        } else {
            0.0
        }
    });
    let ortho = orthonormalize(&[a, b]).unwrap();
    let theta: f64 = 0.8;
    let mixed1 = ortho[0]
        .scaled(theta.cos())
        .add_scaled(theta.sin(), &ortho[1])
        .unwrap();
    let mixed2 = ortho[0]
        .scaled(-theta.sin())
        .add_scaled(theta.cos(), &ortho[1])
        .unwrap();
    let planted = generate_finite_rank(
        &FiniteRankSpec::new(
            vec![1.0, 0.3],
            vec![mixed1, mixed2],
            CoefficientLaw::Gaussian,
            818,
        )
        .unwrap(),
        150,
    )
    .unwrap();

    let mut worst_gap = f64::NEG_INFINITY;
    for (name, ens) in [("separable", &separable), ("planted", &planted)] {
        let mn = ens.stacked_dim();
        let bound = mn.min(ens.n_samples());
        let kernel = empirical_operator_kernel(ens).unwrap();
        let eig = naive_eigendecomposition(&kernel, bound).unwrap();
        let fourier = fourier_tensor_basis(ens.grid(), ens.trunc(), mn).unwrap();
        for j in [1usize, 2, 4, 8] {
            if j > bound {
                continue;
            }
            let scalar = scalar_comparison(ens, j).unwrap();
            let gap = scalar.operator_kl_global_mse - scalar.scalar_basis_global_mse;
            worst_gap = worst_gap.max(gap);
            assert!(
                gap <= margin,
                "{name} J = {j}: expansion loses to the scalar basis by {gap:.3e}"
            );
            let kl = global_truncation_mse(ens, &eig, j).unwrap();
            let alt = projection_mse(ens, &fourier, j).unwrap();
            worst_gap = worst_gap.max(kl - alt);
            assert!(
                kl <= alt + margin,
                "{name} J = {j}: expansion loses to the Fourier tensor basis by {:.3e}",
                kl - alt
            );
        }
    }
    println!(
        "[PASS] C8 optimality: expansion never loses, worst margin {worst_gap:.3e} \
         (≤ {margin:.0e})"
    );
}

#[test]
fn c09_complexity_trend() {
    let _guard = serial();
    let start = Instant::now();
    let report = flowkl_cli::bench::run_bench(&[64, 128, 256, 512], 4, 32, 5, 42).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        report.slope_gap >= 1.5,
        "log-log slope gap {:.2} (dense {:.2}, svd {:.2})",
        report.slope_gap,
        report.naive_slope,
        report.svd_slope
    );
    assert!(elapsed < 180.0, "bench sweep took {elapsed:.1} s");
    println!(
        "[PASS] C9 complexity trend: dense slope {:.2}, svd slope {:.2}, gap {:.2}, {elapsed:.1} s",
        report.naive_slope, report.svd_slope, report.slope_gap
    );
}

#[test]
fn c10_determinism() {
    let _guard = serial();
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_flowkl");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .current_dir(tmp.path())
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{:?}: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };

    // byte-identical ensembles across repeated runs and thread counts
    for (dir, threads) in [("s1", "1"), ("s2", "4"), ("s3", "1")] {
        run(&[
            "simulate", "-n", "24", "-m", "2", "-N", "64", "--seed", "9", "--threads", threads,
            "--out-dir", dir, "--out", &format!("{dir}/ens.flowkl"),
        ]);
    }
    let bytes1 = fs::read(tmp.path().join("s1/ens.flowkl")).unwrap();
    let bytes2 = fs::read(tmp.path().join("s2/ens.flowkl")).unwrap();
    let bytes3 = fs::read(tmp.path().join("s3/ens.flowkl")).unwrap();
    assert_eq!(bytes1, bytes2, "ensemble differs across thread counts");
    assert_eq!(bytes1, bytes3, "ensemble differs across repeated runs");

    // value-identical reports (field for field) across thread counts
    for (dir, threads) in [("d1", "1"), ("d4", "4")] {
        run(&[
            "decompose", "--input", "s1/ens.flowkl", "--path", "both", "--threads", threads,
            "--out-dir", dir,
        ]);
    }
    let s1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("d1/summary.json")).unwrap())
            .unwrap();
    let s4: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("d4/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s1, s4, "decompose summaries differ across thread counts");

    for (dir, threads) in [("m1", "1"), ("m4", "4")] {
        run(&[
            "mercer-check", "--input", "s1/ens.flowkl", "--threads", threads, "--out-dir", dir,
        ]);
    }
    let m1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("m1/summary.json")).unwrap())
            .unwrap();
    let m4: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("m4/summary.json")).unwrap())
            .unwrap();
    assert_eq!(m1, m4, "mercer summaries differ across thread counts");

    println!(
        "[PASS] C10 determinism: byte-identical ensembles and value-identical reports \
         across runs and thread counts {{1, 4}}"
    );
}
