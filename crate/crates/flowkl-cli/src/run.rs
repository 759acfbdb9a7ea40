//! Command execution and the machine-readable run summary.
//!
//! Every run writes `summary.json` into the output directory: schema
//! version, library version, the config echo, per-check outcomes, and the
//! command's report. Exit status encodes the result: 0 success, 1 when a
//! check lands outside its tolerance, 2 for input or format errors.

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use flowkl::covariance::{empirical_operator_kernel, trace_identity};
use flowkl::diagnostics::{
    mercer_convergence_report, scalar_comparison, uniform_mse_profile, uniform_mse_profile_with_mc,
};
use flowkl::generators::{generate_finite_rank, generate_separable_brownian};
use flowkl::io::{
    read_ensemble, read_kernel, validate_file, write_ensemble, write_eigensystem,
    write_eigenvalues_csv, FileKind,
};
use flowkl::spectral::{cross_validate_paths, naive_eigendecomposition, svd_fast_path};
use flowkl::{BasisTruncation, DiscreteKernel, EigenSystem, FlowEnsemble, Grid};

use crate::bench::run_bench;
use crate::cli::{
    default_sweep, parse_f64_list, parse_usize_list, BenchArgs, Cli, Command, CompareScalarArgs,
    DecomposeArgs, GeneratorSpecFile, KlCheckArgs, MercerCheckArgs, PathChoice, SimulateArgs,
    SourceArgs, TraceCheckArgs, ValidateArgs,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or an unusable input file.
    Input(String),
    Flow(flowkl::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Flow(e) => write!(f, "{e}"),
        }
    }
}

impl From<flowkl::Error> for CliError {
    fn from(e: flowkl::Error) -> Self {
        CliError::Flow(e)
    }
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn ensure_positive(name: &str, value: f64) -> Result<(), CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(input_err(format!("{name} must be positive, got {value}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl CheckResult {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name,
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn at_least(name: &'static str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name,
            passed: value >= threshold,
            value,
            threshold,
        }
    }
}

/// What a command produced: checks, artifact file names (relative to the
/// output directory unless given absolutely), and its report.
pub struct CommandOutput {
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<String>,
    pub report: Option<serde_json::Value>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: &'static str,
    library_version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    outcome: &'static str,
    checks: &'a [CheckResult],
    artifacts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Twelve hex characters of the SHA-256 of the command config; names the
/// default output directory so identical configs land in the same place.
pub fn config_hash(command: &Command) -> String {
    let encoded = serde_json::to_vec(command).expect("config serializes");
    let digest = Sha256::digest(&encoded);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn default_out_dir(command: &Command) -> PathBuf {
    PathBuf::from("flowkl-out").join(format!("{}-{}", command.name(), config_hash(command)))
}

/// Full process entry point; returns the exit status.
pub fn execute(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // ignore the error when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| default_out_dir(&cli.command));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output directory {}: {e}", out_dir.display());
        return 2;
    }

    let result = run(&cli, &out_dir);
    let config = serde_json::to_value(&cli.command).expect("config serializes");
    let (outcome, checks, artifacts, report, error) = match &result {
        Ok(out) => {
            let outcome = if out.checks.iter().all(|c| c.passed) {
                "pass"
            } else {
                "check-failed"
            };
            (outcome, out.checks.clone(), out.artifacts.clone(), out.report.clone(), None)
        }
        Err(e) => ("error", Vec::new(), Vec::new(), None, Some(e.to_string())),
    };

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        config,
        outcome,
        checks: &checks,
        artifacts: &artifacts,
        report: report.as_ref(),
        error: error.as_deref(),
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let summary_path = out_dir.join("summary.json");
    if let Err(e) = fs::write(&summary_path, &summary_json) {
        eprintln!("error: cannot write {}: {e}", summary_path.display());
        return 2;
    }

    for check in &checks {
        eprintln!(
            "[{}] {}: value {:.6e}, threshold {:.6e}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.threshold
        );
    }
    if let Some(msg) = &error {
        eprintln!("error: {msg}");
    }
    eprintln!("summary: {}", summary_path.display());
    if cli.json {
        println!("{summary_json}");
    }

    match (&result, outcome) {
        (Err(_), _) => 2,
        (_, "check-failed") => 1,
        _ => 0,
    }
}

/// Dispatch a parsed command against an existing output directory.
pub fn run(cli: &Cli, out_dir: &Path) -> Result<CommandOutput, CliError> {
    match &cli.command {
        Command::Simulate(args) => simulate(args, out_dir),
        Command::Decompose(args) => decompose(args, out_dir),
        Command::TraceCheck(args) => trace_check(args),
        Command::MercerCheck(args) => mercer_check(args, out_dir),
        Command::KlCheck(args) => kl_check(args, out_dir),
        Command::CompareScalar(args) => compare_scalar(args),
        Command::Bench(args) => bench(args, out_dir),
        Command::Validate(args) => validate(args),
    }
}

fn read_spec_file(path: &Path) -> Result<GeneratorSpecFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_err(format!("cannot read spec {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| input_err(format!("spec {} is not valid JSON: {e}", path.display())))
}

fn simulate(args: &SimulateArgs, out_dir: &Path) -> Result<CommandOutput, CliError> {
    let spec_file = match &args.spec {
        Some(path) => read_spec_file(path)?,
        None => {
            let mu = match (&args.mu, args.dims) {
                (Some(list), _) => parse_f64_list(list).map_err(input_err)?,
                (None, Some(m)) => (1..=m).map(|i| 0.5f64.powi(i as i32)).collect(),
                (None, None) => {
                    return Err(input_err("either --mu, --dims, or --spec is required"))
                }
            };
            GeneratorSpecFile::SeparableBrownian {
                mu,
                j_max: args.j_max,
                seed: args.seed.unwrap_or(0),
            }
        }
    };
    let generator_name = spec_file.name();

    let (ens, seed) = match spec_file {
        GeneratorSpecFile::SeparableBrownian { .. } => {
            let spec = spec_file
                .clone()
                .into_brownian(args.seed)
                .map_err(input_err)?;
            if let Some(dims) = args.dims {
                if dims != spec.m() {
                    return Err(input_err(format!(
                        "--dims {dims} conflicts with the spectrum length {}",
                        spec.m()
                    )));
                }
            }
            let grid = Grid::uniform(args.nodes, args.domain_length)?;
            let trunc = BasisTruncation::new(spec.m())?;
            let seed = spec.seed;
            (
                generate_separable_brownian(&spec, &grid, trunc, args.samples)?,
                seed,
            )
        }
        GeneratorSpecFile::FiniteRank { seed, .. } => {
            let effective_seed = args.seed.unwrap_or(seed);
            let spec = spec_file
                .clone()
                .into_finite_rank(args.seed)
                .map_err(input_err)?;
            if args.nodes != spec.grid().n() {
                return Err(input_err(format!(
                    "--nodes {} conflicts with the spec eigenflows ({} nodes)",
                    args.nodes,
                    spec.grid().n()
                )));
            }
            (generate_finite_rank(&spec, args.samples)?, effective_seed)
        }
    };

    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("ensemble.flowkl"));
    write_ensemble(&out_path, &ens, Some(seed), Some(generator_name))?;
    let digest = Sha256::digest(fs::read(&out_path).map_err(flowkl::Error::from)?);
    let sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();

    Ok(CommandOutput {
        checks: Vec::new(),
        artifacts: vec![artifact_name(&out_path, out_dir)],
        report: Some(json!({
            "path": out_path.display().to_string(),
            "sha256": sha256,
            "n": ens.grid().n(),
            "m": ens.trunc().m(),
            "N": ens.n_samples(),
            "domain_length": ens.grid().domain_length(),
            "generator": generator_name,
            "seed": seed,
        })),
    })
}

fn load_centered_ensemble(path: &Path, no_center: bool) -> Result<FlowEnsemble, CliError> {
    let (ens, _) = read_ensemble(path)?;
    Ok(if no_center { ens } else { ens.centered() })
}

fn decompose(args: &DecomposeArgs, out_dir: &Path) -> Result<CommandOutput, CliError> {
    ensure_positive("--tol-eigval", args.tol_eigval)?;
    ensure_positive("--tol-align", args.tol_align)?;
    ensure_positive("--gap-tol", args.gap_tol)?;
    let ens = load_centered_ensemble(&args.input, args.no_center)?;
    let mn = ens.stacked_dim();
    let rank_bound = mn.min(ens.n_samples());
    let j = args.components.unwrap_or(rank_bound);

    let mut artifacts = Vec::new();
    let mut checks = Vec::new();
    let mut report = serde_json::Map::new();

    let write_eig = |eig: &EigenSystem, tag: &str, artifacts: &mut Vec<String>| -> Result<(), CliError> {
        let eig_path = out_dir.join(format!("eigensystem-{tag}.flowke"));
        let csv_path = out_dir.join(format!("eigenvalues-{tag}.csv"));
        write_eigensystem(&eig_path, eig)?;
        write_eigenvalues_csv(&csv_path, eig)?;
        artifacts.push(artifact_name(&eig_path, out_dir));
        artifacts.push(artifact_name(&csv_path, out_dir));
        Ok(())
    };

    match args.path {
        PathChoice::Naive => {
            let kernel = empirical_operator_kernel(&ens)?;
            let eig = naive_eigendecomposition(&kernel, j)?;
            write_eig(&eig, "naive", &mut artifacts)?;
            report.insert("eigenvalues".into(), json!(eig.eigenvalues()));
        }
        PathChoice::Svd => {
            let eig = svd_fast_path(&ens, j)?;
            write_eig(&eig, "svd", &mut artifacts)?;
            report.insert("eigenvalues".into(), json!(eig.eigenvalues()));
        }
        PathChoice::Both => {
            let kernel = empirical_operator_kernel(&ens)?;
            let dense = naive_eigendecomposition(&kernel, j)?;
            let svd = svd_fast_path(&ens, j)?;
            write_eig(&dense, "naive", &mut artifacts)?;
            write_eig(&svd, "svd", &mut artifacts)?;
            let cross = cross_validate_paths(&ens, j, args.gap_tol)?;
            checks.push(CheckResult::at_most(
                "path_eigenvalue_agreement",
                cross.max_eigval_rel_err,
                args.tol_eigval,
            ));
            checks.push(CheckResult::at_least(
                "path_alignment",
                cross.min_abs_alignment,
                1.0 - args.tol_align,
            ));
            report.insert("eigenvalues".into(), json!(dense.eigenvalues()));
            report.insert(
                "cross_validation".into(),
                serde_json::to_value(&cross).expect("report serializes"),
            );
        }
    }

    Ok(CommandOutput {
        checks,
        artifacts,
        report: Some(serde_json::Value::Object(report)),
    })
}

/// A kernel resolved from `--input` or `--spec`, carrying the generator
/// when fresh samples can be drawn from it.
struct ResolvedSource {
    kernel: DiscreteKernel,
    spec: Option<(GeneratorSpecFile, Grid)>,
    description: String,
}

fn resolve_source(source: &SourceArgs) -> Result<ResolvedSource, CliError> {
    match (&source.input, &source.spec) {
        (Some(path), None) => {
            let kind = validate_file(path)?.kind;
            match kind {
                FileKind::Ensemble => {
                    let ens = load_centered_ensemble(path, source.no_center)?;
                    let kernel = empirical_operator_kernel(&ens)?;
                    Ok(ResolvedSource {
                        kernel,
                        spec: None,
                        description: format!("empirical kernel of {}", path.display()),
                    })
                }
                FileKind::Kernel => {
                    let (kernel, _) = read_kernel(path)?;
                    Ok(ResolvedSource {
                        kernel,
                        spec: None,
                        description: format!("kernel file {}", path.display()),
                    })
                }
                FileKind::Eigensystem => Err(input_err(
                    "expected an ensemble or kernel file, found an eigensystem",
                )),
            }
        }
        (None, Some(spec_path)) => {
            let spec_file = read_spec_file(spec_path)?;
            match &spec_file {
                GeneratorSpecFile::SeparableBrownian { .. } => {
                    let nodes = source
                        .nodes
                        .ok_or_else(|| input_err("--spec with a Brownian generator needs --nodes"))?;
                    let grid = Grid::uniform(nodes, source.domain_length)?;
                    let spec = spec_file.clone().into_brownian(None).map_err(input_err)?;
                    let kernel = spec.truncated_population_kernel(&grid)?;
                    Ok(ResolvedSource {
                        kernel,
                        spec: Some((spec_file, grid)),
                        description: format!(
                            "population kernel of {}",
                            spec_path.display()
                        ),
                    })
                }
                GeneratorSpecFile::FiniteRank { .. } => {
                    let spec = spec_file.clone().into_finite_rank(None).map_err(input_err)?;
                    let grid = spec.grid().clone();
                    let kernel = spec.population_kernel()?;
                    Ok(ResolvedSource {
                        kernel,
                        spec: Some((spec_file, grid)),
                        description: format!(
                            "population kernel of {}",
                            spec_path.display()
                        ),
                    })
                }
            }
        }
        _ => Err(input_err("exactly one of --input or --spec is required")),
    }
}

fn full_rank_eigensystem(kernel: &DiscreteKernel) -> Result<EigenSystem, CliError> {
    let mn = kernel.grid().n() * kernel.trunc().m();
    Ok(naive_eigendecomposition(kernel, mn)?)
}

fn resolve_sweep(text: &Option<String>, full: usize) -> Result<Vec<usize>, CliError> {
    match text {
        Some(list) => parse_usize_list(list).map_err(input_err),
        None => Ok(default_sweep(full)),
    }
}

fn trace_check(args: &TraceCheckArgs) -> Result<CommandOutput, CliError> {
    ensure_positive("--tol", args.tol)?;
    let source = resolve_source(&args.source)?;
    let eig = full_rank_eigensystem(&source.kernel)?;
    let report = trace_identity(&source.kernel, &eig)?;
    let checks = vec![CheckResult::at_most(
        "trace_identity_rel_err",
        report.rel_err,
        args.tol,
    )];
    Ok(CommandOutput {
        checks,
        artifacts: Vec::new(),
        report: Some(json!({
            "source": source.description,
            "trace": serde_json::to_value(&report).expect("report serializes"),
        })),
    })
}

fn mercer_check(args: &MercerCheckArgs, out_dir: &Path) -> Result<CommandOutput, CliError> {
    ensure_positive("--tol-rel", args.tol_rel)?;
    ensure_positive("--lemma-tol", args.lemma_tol)?;
    let source = resolve_source(&args.source)?;
    let eig = full_rank_eigensystem(&source.kernel)?;
    let sweep = resolve_sweep(&args.j_sweep, eig.count())?;
    let report = mercer_convergence_report(&source.kernel, &eig, &sweep)?;

    let scale = report.scale.max(f64::MIN_POSITIVE);
    let max_increase = report
        .residual_sup_trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let worst_domination = report
        .diag_psd_worst_rel
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let worst_excess = report
        .partial_sum_bound_excess
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    let mut checks = vec![
        CheckResult::at_most("residual_monotone_increase", max_increase, args.tol_rel * scale),
        CheckResult::at_least("diagonal_domination_rel", worst_domination, -args.tol_rel),
        CheckResult::at_most("partial_sum_bound_excess", worst_excess, args.lemma_tol),
    ];
    if sweep.last() == Some(&eig.count()) {
        checks.push(CheckResult::at_most(
            "full_rank_residual",
            *report.residual_sup_trace.last().expect("nonempty sweep"),
            args.tol_rel * scale,
        ));
    }

    let report_value = serde_json::to_value(&report).expect("report serializes");
    let csv_path = out_dir.join("mercer-report.csv");
    fs::write(&csv_path, report.to_csv()).map_err(flowkl::Error::from)?;
    let json_path = out_dir.join("mercer-report.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "mercer": &report_value,
        }))
        .expect("report serializes"),
    )
    .map_err(flowkl::Error::from)?;

    Ok(CommandOutput {
        checks,
        artifacts: vec![
            artifact_name(&csv_path, out_dir),
            artifact_name(&json_path, out_dir),
        ],
        report: Some(json!({
            "source": source.description,
            "mercer": report_value,
        })),
    })
}

fn kl_check(args: &KlCheckArgs, out_dir: &Path) -> Result<CommandOutput, CliError> {
    ensure_positive("--tol-rel", args.tol_rel)?;
    ensure_positive("--mc-sigma", args.mc_sigma)?;
    let source = resolve_source(&args.source)?;
    let eig = full_rank_eigensystem(&source.kernel)?;
    let sweep = resolve_sweep(&args.j_sweep, eig.count())?;

    let report = match args.mc_replicates {
        None => uniform_mse_profile(&source.kernel, &eig, &sweep)?,
        Some(replicates) => {
            let (spec_file, grid) = source.spec.as_ref().ok_or_else(|| {
                input_err("--mc-replicates draws fresh samples and therefore needs --spec")
            })?;
            let fresh = match spec_file {
                GeneratorSpecFile::SeparableBrownian { .. } => {
                    let spec = spec_file
                        .clone()
                        .into_brownian(Some(args.mc_seed))
                        .map_err(input_err)?;
                    let trunc = BasisTruncation::new(spec.m())?;
                    generate_separable_brownian(&spec, grid, trunc, replicates)?
                }
                GeneratorSpecFile::FiniteRank { .. } => {
                    let spec = spec_file
                        .clone()
                        .into_finite_rank(Some(args.mc_seed))
                        .map_err(input_err)?;
                    generate_finite_rank(&spec, replicates)?
                }
            };
            uniform_mse_profile_with_mc(&source.kernel, &eig, &sweep, &fresh)?
        }
    };

    let scale = report.scale.max(f64::MIN_POSITIVE);
    let min_entry = report
        .mse_profile_sup
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max_increase = report
        .mse_profile_sup
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);

    let mut checks = vec![
        CheckResult::at_least("profile_nonnegative", min_entry, -args.tol_rel * scale),
        CheckResult::at_most("profile_monotone_increase", max_increase, args.tol_rel * scale),
    ];
    if sweep.last() == Some(&eig.count()) {
        checks.push(CheckResult::at_most(
            "full_rank_profile",
            *report.mse_profile_sup.last().expect("nonempty sweep"),
            args.tol_rel * scale,
        ));
    }
    if let Some(gap) = report.mc_max_sigma_gap {
        checks.push(CheckResult::at_most("mc_sigma_gap", gap, args.mc_sigma));
    }

    let report_value = serde_json::to_value(&report).expect("report serializes");
    let csv_path = out_dir.join("kl-report.csv");
    fs::write(&csv_path, report.to_csv()).map_err(flowkl::Error::from)?;
    let json_path = out_dir.join("kl-report.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "kl": &report_value,
        }))
        .expect("report serializes"),
    )
    .map_err(flowkl::Error::from)?;

    Ok(CommandOutput {
        checks,
        artifacts: vec![
            artifact_name(&csv_path, out_dir),
            artifact_name(&json_path, out_dir),
        ],
        report: Some(json!({
            "source": source.description,
            "kl": report_value,
        })),
    })
}

fn compare_scalar(args: &CompareScalarArgs) -> Result<CommandOutput, CliError> {
    ensure_positive("--margin", args.margin)?;
    let ens = load_centered_ensemble(&args.input, args.no_center)?;
    let report = scalar_comparison(&ens, args.components)?;
    let checks = vec![CheckResult::at_most(
        "operator_minus_scalar_mse",
        report.operator_kl_global_mse - report.scalar_basis_global_mse,
        args.margin,
    )];
    Ok(CommandOutput {
        checks,
        artifacts: Vec::new(),
        report: Some(serde_json::to_value(&report).expect("report serializes")),
    })
}

fn bench(args: &BenchArgs, out_dir: &Path) -> Result<CommandOutput, CliError> {
    ensure_positive("--min-slope-gap", args.min_slope_gap)?;
    let sizes = parse_usize_list(&args.sweep).map_err(input_err)?;
    let report = run_bench(&sizes, args.dims, args.samples, args.reps, args.seed)?;
    let checks = vec![CheckResult::at_least(
        "log_log_slope_gap",
        report.slope_gap,
        args.min_slope_gap,
    )];
    let csv_path = out_dir.join("bench.csv");
    fs::write(&csv_path, report.to_csv()).map_err(flowkl::Error::from)?;
    Ok(CommandOutput {
        checks,
        artifacts: vec![artifact_name(&csv_path, out_dir)],
        report: Some(serde_json::to_value(&report).expect("report serializes")),
    })
}

fn validate(args: &ValidateArgs) -> Result<CommandOutput, CliError> {
    let report = validate_file(&args.input)?;
    Ok(CommandOutput {
        checks: Vec::new(),
        artifacts: Vec::new(),
        report: Some(serde_json::to_value(&report).expect("report serializes")),
    })
}

fn artifact_name(path: &Path, out_dir: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .display()
        .to_string()
}
