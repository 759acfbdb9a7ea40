//! Command-line surface: flags, generator spec files, and small parsers.

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowkl::generators::{CoefficientLaw, FiniteRankSpec, SeparableBrownianSpec};
use flowkl::{BasisTruncation, FlowSample, Grid};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "flowkl",
    version,
    about = "Simulate Hilbert-space-valued random flows, decompose their covariance, and check the expansion identities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Print the run summary JSON to standard output.
    #[arg(long, global = true)]
    pub json: bool,

    /// Output directory (default: `./flowkl-out/<command>-<config hash>`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Cap the worker thread count; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Draw a synthetic ensemble and write it as a FLOWKL01 file.
    Simulate(SimulateArgs),
    /// Decompose an ensemble along the dense and/or SVD route.
    Decompose(DecomposeArgs),
    /// Compare Σλ with the quadrature trace of the kernel diagonal.
    TraceCheck(TraceCheckArgs),
    /// Sweep partial-sum residuals, domination, and the trace-norm bound.
    MercerCheck(MercerCheckArgs),
    /// Sweep the truncation-error profile, optionally against Monte Carlo.
    KlCheck(KlCheckArgs),
    /// Compare the expansion basis with the scalar product basis.
    CompareScalar(CompareScalarArgs),
    /// Time the two decomposition routes over a size sweep.
    Bench(BenchArgs),
    /// Validate the format of an interchange file.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Decompose(_) => "decompose",
            Command::TraceCheck(_) => "trace-check",
            Command::MercerCheck(_) => "mercer-check",
            Command::KlCheck(_) => "kl-check",
            Command::CompareScalar(_) => "compare-scalar",
            Command::Bench(_) => "bench",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Number of grid nodes.
    #[arg(long, short = 'n')]
    pub nodes: usize,

    /// Interval length.
    #[arg(long, default_value_t = 1.0)]
    pub domain_length: f64,

    /// Retained ambient dimensions (defaults to the spectrum length).
    #[arg(long, short = 'm')]
    pub dims: Option<usize>,

    /// Number of samples to draw.
    #[arg(long, short = 'N')]
    pub samples: usize,

    /// Sampler seed; overrides the seed inside --spec when given.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Temporal modes kept by the Brownian sampler.
    #[arg(long, default_value_t = 64)]
    pub j_max: usize,

    /// Comma-separated ambient spectrum (default: 2^-i for i = 1..=dims).
    #[arg(long)]
    pub mu: Option<String>,

    /// Generator spec JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Ensemble output path (default: `<out-dir>/ensemble.flowkl`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathChoice {
    Naive,
    Svd,
    Both,
}

#[derive(Args, Debug, Serialize)]
pub struct DecomposeArgs {
    /// Ensemble file.
    #[arg(long)]
    pub input: PathBuf,

    /// Decomposition route.
    #[arg(long, value_enum, default_value_t = PathChoice::Both)]
    pub path: PathChoice,

    /// Components to keep (default: min(m·n, N)).
    #[arg(long, short = 'J')]
    pub components: Option<usize>,

    /// Keep the raw ensemble instead of subtracting the mean flow.
    #[arg(long)]
    pub no_center: bool,

    /// Relative eigenvalue agreement required between the two routes.
    #[arg(long, default_value_t = flowkl::tol::PATH_EIGVAL_REL)]
    pub tol_eigval: f64,

    /// Quadrature alignment slack on simple eigenvalues.
    #[arg(long, default_value_t = flowkl::tol::PATH_ALIGNMENT)]
    pub tol_align: f64,

    /// Relative spectral gap below which eigenvalues form a cluster.
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct TraceCheckArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    /// Relative tolerance of the trace identity.
    #[arg(long, default_value_t = flowkl::tol::TRACE_IDENTITY_REL)]
    pub tol: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct MercerCheckArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    /// Comma-separated ascending truncation sweep (default: powers of two
    /// up to full rank).
    #[arg(long)]
    pub j_sweep: Option<String>,

    /// Relative tolerance for residual decay and domination.
    #[arg(long, default_value_t = flowkl::tol::REPORT_PSD_REL)]
    pub tol_rel: f64,

    /// Additive tolerance for the partial-sum trace-norm bound.
    #[arg(long, default_value_t = flowkl::tol::PARTIAL_SUM_BOUND)]
    pub lemma_tol: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct KlCheckArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    /// Comma-separated ascending truncation sweep.
    #[arg(long)]
    pub j_sweep: Option<String>,

    /// Fresh Monte Carlo samples for the cross-check (needs --spec).
    #[arg(long)]
    pub mc_replicates: Option<usize>,

    /// Seed of the fresh Monte Carlo ensemble.
    #[arg(long, default_value_t = 777)]
    pub mc_seed: u64,

    /// Allowed deviation in Monte Carlo standard errors.
    #[arg(long, default_value_t = flowkl::tol::MC_SIGMA_FACTOR)]
    pub mc_sigma: f64,

    /// Relative tolerance for profile positivity and full-rank decay.
    #[arg(long, default_value_t = flowkl::tol::REPORT_PSD_REL)]
    pub tol_rel: f64,
}

/// Shared `--input`/`--spec` source flags.
#[derive(Args, Debug, Serialize)]
pub struct SourceArgs {
    /// Ensemble (FLOWKL01) or kernel (FLOWKK01) file.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Generator spec JSON; uses its population kernel instead of a file.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Grid nodes (required with --spec for Brownian generators).
    #[arg(long, short = 'n')]
    pub nodes: Option<usize>,

    /// Interval length for --spec grids.
    #[arg(long, default_value_t = 1.0)]
    pub domain_length: f64,

    /// Keep the raw ensemble instead of subtracting the mean flow.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareScalarArgs {
    /// Ensemble file.
    #[arg(long)]
    pub input: PathBuf,

    /// Component count for both expansions.
    #[arg(long, short = 'J')]
    pub components: usize,

    /// Keep the raw ensemble instead of subtracting the mean flow.
    #[arg(long)]
    pub no_center: bool,

    /// Allowed excess of the operator error over the scalar error.
    #[arg(long, default_value_t = flowkl::tol::OPTIMALITY_MARGIN)]
    pub margin: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Comma-separated stacked dimensions m·n to sweep.
    #[arg(long, default_value = "64,128,256,512")]
    pub sweep: String,

    /// Samples per ensemble.
    #[arg(long, short = 'N', default_value_t = 32)]
    pub samples: usize,

    /// Ambient dimensions; every sweep entry must be divisible by this.
    #[arg(long, short = 'm', default_value_t = 4)]
    pub dims: usize,

    /// Timed repetitions per point after one warmup.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Required fitted log-log slope difference (dense − SVD).
    #[arg(long, default_value_t = 1.5)]
    pub min_slope_gap: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    /// File to validate.
    #[arg(long)]
    pub input: PathBuf,
}

/// JSON mirror of the generator specs accepted by `simulate` and the
/// population-kernel checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeneratorSpecFile {
    SeparableBrownian {
        mu: Vec<f64>,
        j_max: usize,
        seed: u64,
    },
    FiniteRank {
        domain_length: f64,
        eigenvalues: Vec<f64>,
        /// `[component][node][ambient index]` coefficients.
        eigenflows: Vec<Vec<Vec<f64>>>,
        coefficient_law: CoefficientLaw,
        seed: u64,
    },
}

impl GeneratorSpecFile {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpecFile::SeparableBrownian { .. } => "separable_brownian",
            GeneratorSpecFile::FiniteRank { .. } => "finite_rank",
        }
    }

    pub fn into_brownian(self, seed_override: Option<u64>) -> Result<SeparableBrownianSpec, String> {
        match self {
            GeneratorSpecFile::SeparableBrownian { mu, j_max, seed } => {
                SeparableBrownianSpec::new(mu, j_max, seed_override.unwrap_or(seed))
                    .map_err(|e| e.to_string())
            }
            GeneratorSpecFile::FiniteRank { .. } => {
                Err("expected a separable_brownian spec".to_owned())
            }
        }
    }

    pub fn into_finite_rank(self, seed_override: Option<u64>) -> Result<FiniteRankSpec, String> {
        match self {
            GeneratorSpecFile::FiniteRank {
                domain_length,
                eigenvalues,
                eigenflows,
                coefficient_law,
                seed,
            } => {
                let first = eigenflows
                    .first()
                    .ok_or_else(|| "finite_rank spec needs at least one eigenflow".to_owned())?;
                let n = first.len();
                let m = first.first().map(Vec::len).unwrap_or(0);
                let grid = Grid::uniform(n, domain_length).map_err(|e| e.to_string())?;
                let trunc = BasisTruncation::new(m).map_err(|e| e.to_string())?;
                let mut flows = Vec::with_capacity(eigenflows.len());
                for rows in &eigenflows {
                    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
                        return Err("ragged eigenflow coefficient array".to_owned());
                    }
                    let coeffs = DMatrix::from_fn(n, m, |k, i| rows[k][i]);
                    flows.push(
                        FlowSample::new(grid.clone(), trunc, coeffs).map_err(|e| e.to_string())?,
                    );
                }
                FiniteRankSpec::new(
                    eigenvalues,
                    flows,
                    coefficient_law,
                    seed_override.unwrap_or(seed),
                )
                .map_err(|e| e.to_string())
            }
            GeneratorSpecFile::SeparableBrownian { .. } => {
                Err("expected a finite_rank spec".to_owned())
            }
        }
    }
}

/// Parse a comma-separated list of positive integers.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| format!("'{tok}': {e}"))
        })
        .collect()
}

/// Parse a comma-separated list of floats.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| format!("'{tok}': {e}"))
        })
        .collect()
}

/// Powers of two below `full`, then `full` itself.
pub fn default_sweep(full: usize) -> Vec<usize> {
    let mut sweep = Vec::new();
    let mut j = 1;
    while j < full {
        sweep.push(j);
        j *= 2;
    }
    sweep.push(full);
    sweep
}
