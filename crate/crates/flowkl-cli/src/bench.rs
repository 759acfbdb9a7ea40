//! Timing harness for the two decomposition routes.
//!
//! The dense route assembles `(1/N)XXᵀ` and eigensolves the `mn × mn`
//! matrix; the SVD route factorizes the `mn × N` data matrix directly. At
//! fixed `N` the first grows roughly cubically in `mn`, the second roughly
//! linearly, which the fitted log-log slopes make measurable.

use flowkl::covariance::empirical_operator_kernel;
use flowkl::spectral::{naive_eigendecomposition, svd_fast_path};
use flowkl::{BasisTruncation, FlowEnsemble, Grid};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct BenchPoint {
    pub mn: usize,
    pub n: usize,
    pub m: usize,
    /// Median seconds for kernel assembly plus dense eigendecomposition.
    pub naive_seconds: f64,
    /// Median seconds for the thin SVD route.
    pub svd_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    pub samples: usize,
    pub reps: usize,
    pub naive_slope: f64,
    pub svd_slope: f64,
    /// `naive_slope − svd_slope`.
    pub slope_gap: f64,
    pub host: String,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mn,n,m,naive_seconds,svd_seconds\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{:.6e},{:.6e}\n",
                p.mn, p.n, p.m, p.naive_seconds, p.svd_seconds
            ));
        }
        out
    }
}

/// Time both routes over the stacked-dimension sweep (one warmup, then the
/// median of `reps` runs per point).
pub fn run_bench(
    sizes: &[usize],
    m: usize,
    samples: usize,
    reps: usize,
    seed: u64,
) -> flowkl::Result<BenchReport> {
    if sizes.is_empty() {
        return Err(flowkl::Error::InvalidParameter("empty bench sweep".into()));
    }
    if reps == 0 {
        return Err(flowkl::Error::InvalidParameter("reps must be positive".into()));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for (idx, &mn) in sizes.iter().enumerate() {
        if mn % m != 0 || mn == 0 {
            return Err(flowkl::Error::InvalidParameter(format!(
                "sweep entry {mn} is not a positive multiple of m = {m}"
            )));
        }
        let n = mn / m;
        let grid = Grid::unit(n)?;
        let trunc = BasisTruncation::new(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let data = DMatrix::from_fn(mn, samples, |_, _| rng.sample(StandardNormal));
        let ens = FlowEnsemble::new(grid, trunc, data)?;
        let j = mn.min(samples);

        let naive_seconds = median_time(reps, || {
            let kernel = empirical_operator_kernel(&ens).expect("nonempty ensemble");
            let eig = naive_eigendecomposition(&kernel, j).expect("psd kernel");
            std::hint::black_box(eig.eigenvalue(0));
        });
        let svd_seconds = median_time(reps, || {
            let eig = svd_fast_path(&ens, j).expect("rank bound holds");
            std::hint::black_box(eig.eigenvalue(0));
        });
        points.push(BenchPoint {
            mn,
            n,
            m,
            naive_seconds,
            svd_seconds,
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| p.mn as f64).collect();
    let naive_slope = fit_log_log_slope(
        &xs,
        &points.iter().map(|p| p.naive_seconds).collect::<Vec<_>>(),
    );
    let svd_slope = fit_log_log_slope(
        &xs,
        &points.iter().map(|p| p.svd_seconds).collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        points,
        samples,
        reps,
        naive_slope,
        svd_slope,
        slope_gap: naive_slope - svd_slope,
        host: format!(
            "{} {}, {} worker threads",
            std::env::consts::OS,
            std::env::consts::ARCH,
            rayon::current_num_threads()
        ),
    })
}

fn median_time(reps: usize, mut body: impl FnMut()) -> f64 {
    body(); // warmup
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            body();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times[times.len() / 2]
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(1e-12).ln()).collect();
    let mean_x = lx.iter().sum::<f64>() / n;
    let mean_y = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}
