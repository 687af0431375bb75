//! Command-line front-end: simulate panels, fit mediation curves with
//! bootstrap bands, run coverage experiments, and compute error metrics.
//!
//! Every subcommand writes its primary outputs atomically (tempfile +
//! rename) together with a `manifest.json` that records the fully
//! resolved configuration — including a seed drawn from the OS when none
//! was given — so any run can be replayed from its manifest. Warnings
//! (skipped time points, dropped subjects, failed bootstrap replicates)
//! go to stderr; stdout carries only machine-readable payloads.
//!
//! Exit codes: 0 success, 2 malformed input, 3 too few usable time
//! points, 4 too many bootstrap failures, 5 invalid configuration,
//! 1 anything else.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bootstrap::{bootstrap_band, BootstrapConfig};
use crate::mediation::{write_curves_csv, SmoothConfig};
use crate::panel::{load_panel_path, write_panel, ColumnSchema};
use crate::pipeline::{fit_panel, FitConfig};
use crate::sim::{
    coverage_experiment, generate_panel, made_wase, read_eta_csv, CoverageConfig, EtaCurve,
    SimScenario,
};
use crate::smoother::{BandwidthSelect, KernelFamily};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tvmed",
    version,
    about = "Time-varying mediation analysis for intensive longitudinal data"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores, or
    /// TVMED_WORKERS when set). Outputs do not depend on this.
    #[arg(long, global = true, value_name = "INT")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel plus its ground-truth effect curves
    Simulate(SimulateArgs),
    /// Fit mediation curves to a panel CSV, with bootstrap bands
    Fit(FitArgs),
    /// Monte Carlo confidence-band coverage experiment
    Coverage(CoverageArgs),
    /// MADE/WASE error metrics between a truth table and an estimate
    Metrics(MetricsArgs),
}

/// Built-in generating models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelTag {
    /// Polynomial coefficient curves, wide effect range
    I,
    /// Sinusoidal/shifted-polynomial curves, rougher and narrower
    Ii,
}

impl ModelTag {
    fn label(self) -> &'static str {
        match self {
            ModelTag::I => "i",
            ModelTag::Ii => "ii",
        }
    }
}

/// Where the generating model comes from: a built-in tag or a JSON file.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Built-in generating model
    #[arg(long, value_enum)]
    pub model: Option<ModelTag>,
    /// Scenario JSON file describing a custom generating model
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Number of subjects (overrides the scenario file's value)
    #[arg(long, value_name = "INT")]
    pub n: Option<usize>,
    /// RNG seed (default: drawn from the OS and recorded in the manifest)
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Mediator-to-outcome lag (default: half the grid spacing)
    #[arg(long, value_name = "FLOAT")]
    pub dt: Option<f64>,
    /// Output directory
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input panel CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    /// Smoothing kernel
    #[arg(long, value_parser = parse_kernel, default_value = "epanechnikov")]
    pub kernel: KernelFamily,
    /// Fixed smoothing bandwidth (default: per-series rule-of-thumb)
    #[arg(long, value_parser = parse_bandwidth, value_name = "FLOAT")]
    pub bandwidth: Option<f64>,
    /// Evaluation lag (default: half the smallest grid gap)
    #[arg(long, value_name = "FLOAT")]
    pub dt: Option<f64>,
    /// Bootstrap replicates for the confidence band
    #[arg(long, default_value_t = 500, value_name = "INT")]
    pub boot: usize,
    /// Confidence level of the band
    #[arg(long, default_value_t = 0.95, value_name = "FLOAT")]
    pub level: f64,
    /// Bootstrap RNG seed (default: drawn from the OS and recorded)
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Skip the bootstrap; point estimates only
    #[arg(long, conflicts_with = "boot")]
    pub no_bootstrap: bool,
    /// Subject-id column name
    #[arg(long, default_value = "subject_id", value_name = "NAME")]
    pub id_col: String,
    /// Time column name
    #[arg(long, default_value = "time", value_name = "NAME")]
    pub time_col: String,
    /// Mediator column name
    #[arg(long, default_value = "mediator", value_name = "NAME")]
    pub mediator_col: String,
    /// Outcome column name
    #[arg(long, default_value = "outcome", value_name = "NAME")]
    pub outcome_col: String,
    /// Treatment indicator column names, comma separated
    /// (default: `x`, else `x1,x2,...` as found in the header)
    #[arg(long, value_name = "NAME[,NAME...]")]
    pub arm_cols: Option<String>,
    /// Also write the unsmoothed per-time estimates to this file
    #[arg(long, value_name = "FILE")]
    pub raw_out: Option<PathBuf>,
    /// Also write every bootstrap replicate's effect curve to this file
    #[arg(long, value_name = "FILE")]
    pub bootstrap_dump: Option<PathBuf>,
    /// Print a JSON panel summary (sizes, per-time case counts) to stdout
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Subjects per replication
    #[arg(long, value_name = "INT")]
    pub n: Option<usize>,
    /// Monte Carlo replications
    #[arg(long, default_value_t = 200, value_name = "INT")]
    pub reps: usize,
    /// Bootstrap replicates per replication
    #[arg(long, default_value_t = 500, value_name = "INT")]
    pub boot: usize,
    /// Confidence level of the bands
    #[arg(long, default_value_t = 0.95, value_name = "FLOAT")]
    pub level: f64,
    /// Master RNG seed (default: drawn from the OS and recorded)
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Smoothing kernel
    #[arg(long, value_parser = parse_kernel, default_value = "epanechnikov")]
    pub kernel: KernelFamily,
    /// Fixed smoothing bandwidth (default: per-series rule-of-thumb)
    #[arg(long, value_parser = parse_bandwidth, value_name = "FLOAT")]
    pub bandwidth: Option<f64>,
    /// Lag used for both generation and fitting (default: half spacing)
    #[arg(long, value_name = "FLOAT")]
    pub dt: Option<f64>,
    /// Times at which coverage is recorded, comma separated
    #[arg(long, default_value = "0.2,0.4,0.6,0.8", value_name = "LIST")]
    pub check_times: String,
    /// Output directory
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Ground-truth CSV (`time[,arm]` plus `eta_true` or `eta_hat`)
    #[arg(value_name = "TRUTH")]
    pub truth: PathBuf,
    /// Estimate CSV in the same shape (typically a `fit` curves file)
    #[arg(value_name = "ESTIMATE")]
    pub estimate: PathBuf,
    /// Output directory for metrics.json
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

/// Parse arguments from the process environment and run.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Dispatch a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    init_workers(cli.workers)?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Coverage(args) => cmd_coverage(&args),
        Command::Metrics(args) => cmd_metrics(&args),
    }
}

/// Stable exit code for an error (documented in the module header).
/// Wrapped per-series errors map to their underlying cause's code.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::MalformedInput(_) => 2,
        Error::TooFewTimePoints { .. } => 3,
        Error::TooManyFailures { .. } => 4,
        Error::InvalidConfig(_) => 5,
        Error::Series { source, .. } => exit_code_for(source),
        _ => 1,
    }
}

fn init_workers(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("TVMED_WORKERS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                Error::config(format!(
                    "TVMED_WORKERS must be a positive integer, got {v:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::config("worker count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("cannot size the worker pool: {e}")))
}

fn parse_kernel(s: &str) -> std::result::Result<KernelFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bandwidth(s: &str) -> std::result::Result<f64, String> {
    let h: f64 = s
        .parse()
        .map_err(|_| format!("{s:?} is not a number"))?;
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Err("bandwidth must be a positive finite number".into())
    }
}

fn parse_time_list(s: &str) -> Result<Vec<f64>> {
    let times: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::config(format!("unreadable time {p:?} in list")))
        })
        .collect::<Result<_>>()?;
    if times.is_empty() {
        return Err(Error::config("the time list is empty"));
    }
    Ok(times)
}

/// A fresh seed when the user gave none: wall clock mixed with the
/// process id. Not cryptographic — it only has to differ between runs,
/// and it is always recorded in the manifest for replay.
fn entropy_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    crate::rng::stream_seed(nanos as u64 ^ (nanos >> 64) as u64, u64::from(std::process::id()))
}

/// Build the scenario from a model tag or file, then apply overrides.
/// `seed: None` draws a fresh seed for built-in models but keeps a
/// scenario file's recorded seed (so saved manifests replay verbatim).
fn resolve_scenario(
    source: &ModelSource,
    n: Option<usize>,
    seed: Option<u64>,
    dt: Option<f64>,
) -> Result<SimScenario> {
    let mut scenario = match (source.model, &source.scenario) {
        (Some(tag), None) => match tag {
            ModelTag::I => SimScenario::model_i(n.unwrap_or(100), 0),
            ModelTag::Ii => SimScenario::model_ii(n.unwrap_or(100), 0),
        },
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::malformed(format!("cannot read scenario {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::malformed(format!("scenario {}: {e}", path.display())))?
        }
        _ => return Err(Error::config("give exactly one of --model or --scenario")),
    };
    if let Some(n) = n {
        scenario.n_subjects = n;
    }
    match seed {
        Some(s) => scenario.seed = s,
        None if source.model.is_some() => scenario.seed = entropy_seed(),
        None => {}
    }
    if let Some(dt) = dt {
        scenario.dt = Some(dt);
    }
    scenario.validate()?;
    Ok(scenario)
}

fn source_label(source: &ModelSource) -> String {
    match (source.model, &source.scenario) {
        (Some(tag), _) => tag.label().to_string(),
        (None, Some(path)) => path
            .file_stem()
            .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned()),
        (None, None) => "scenario".to_string(),
    }
}

/// Write through a tempfile in the destination directory, then rename:
/// readers never observe a half-written file.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut std::fs::File) -> Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn columns_json(schema: &ColumnSchema) -> serde_json::Value {
    json!({
        "id": schema.id,
        "time": schema.time,
        "arms": schema.arms,
        "mediator": schema.mediator,
        "outcome": schema.outcome,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = resolve_scenario(&args.source, args.n, args.seed, args.dt)?;
    let (panel, truth) = generate_panel(&scenario)?;
    let schema = ColumnSchema::default_for(panel.n_arms());
    let panel_path = args.out.join("panel.csv");
    write_atomic(&panel_path, |w| write_panel(&panel, w, &schema))?;
    let truth_path = args.out.join("truth.csv");
    write_atomic(&truth_path, |w| truth.write_csv(w))?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "subcommand": "simulate",
            "scenario": scenario,
            "columns": columns_json(&schema),
            "outputs": { "panel": "panel.csv", "truth": "truth.csv" },
        }),
    )?;
    eprintln!(
        "wrote {} ({} subjects x {} times) and {}",
        panel_path.display(),
        panel.n_subjects(),
        panel.n_times(),
        truth_path.display()
    );
    Ok(())
}

/// Column bindings for `fit`: explicit `--arm-cols`, else sniff the
/// header for `x`, else for a consecutive run `x1, x2, ...`.
fn resolve_schema(args: &FitArgs) -> Result<ColumnSchema> {
    let arms = match &args.arm_cols {
        Some(list) => {
            let arms: Vec<String> = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if arms.is_empty() {
                return Err(Error::config("--arm-cols needs at least one column name"));
            }
            arms
        }
        None => sniff_arm_columns(&args.input)?,
    };
    Ok(ColumnSchema {
        id: args.id_col.clone(),
        time: args.time_col.clone(),
        arms,
        mediator: args.mediator_col.clone(),
        outcome: args.outcome_col.clone(),
    })
}

fn sniff_arm_columns(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::malformed(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(format!("cannot read CSV header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.contains(&"x") {
        return Ok(vec!["x".to_string()]);
    }
    let mut arms: Vec<String> = Vec::new();
    while names.contains(&format!("x{}", arms.len() + 1).as_str()) {
        arms.push(format!("x{}", arms.len() + 1));
    }
    if arms.is_empty() {
        return Err(Error::malformed(
            "cannot find treatment columns (looked for 'x', then 'x1', 'x2', ...); \
             bind them with --arm-cols",
        ));
    }
    Ok(arms)
}

fn describe_skip(reason: &crate::estimator::SkipReason) -> String {
    use crate::estimator::SkipReason;
    match reason {
        SkipReason::EmptySlice => "no complete cases".to_string(),
        SkipReason::RankDeficient { rank, needed } => {
            format!("design rank {rank} of {needed}")
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let schema = resolve_schema(args)?;
    let (panel, report) = load_panel_path(&args.input, &schema)?;
    if !report.dropped_subjects.is_empty() {
        eprintln!(
            "warning: dropped {} subject(s) with no usable observations: {}",
            report.dropped_subjects.len(),
            report.dropped_subjects.join(", ")
        );
    }
    if args.summary {
        println!("{}", serde_json::to_string_pretty(&panel.summary())?);
    }

    let fit_config = FitConfig {
        smooth: SmoothConfig {
            family: args.kernel,
            bandwidth: match args.bandwidth {
                Some(h) => BandwidthSelect::Fixed(h),
                None => BandwidthSelect::RuleOfThumb,
            },
        },
        dt: args.dt,
        ..FitConfig::default()
    };
    let with_boot = !args.no_bootstrap && args.boot > 0;
    if args.bootstrap_dump.is_some() && !with_boot {
        return Err(Error::config("--bootstrap-dump needs the bootstrap enabled"));
    }
    let seed = args.seed.unwrap_or_else(entropy_seed);

    let (fit, band, boot_failed) = if with_boot {
        let config = BootstrapConfig {
            replicates: args.boot,
            level: args.level,
            seed,
            fit: fit_config,
            freeze_bandwidths: false,
            keep_replicates: args.bootstrap_dump.is_some(),
        };
        let run = bootstrap_band(&panel, &config)?;
        if run.n_failed > 0 {
            eprintln!(
                "warning: {} of {} bootstrap replicates failed and were dropped",
                run.n_failed, args.boot
            );
        }
        if let Some(dump) = &args.bootstrap_dump {
            let dist = run
                .distribution
                .as_ref()
                .expect("replicates kept when a dump is requested");
            write_atomic(dump, |w| dist.write_csv(w))?;
        }
        (run.fit, run.band, Some(run.n_failed))
    } else {
        let fit = fit_panel(&panel, &fit_config)?;
        let band = fit.band.clone();
        (fit, band, None)
    };
    for skip in &fit.raw.skipped {
        eprintln!(
            "warning: skipped time point t={} ({})",
            skip.time,
            describe_skip(&skip.reason)
        );
    }

    let curves_path = args.out.join("curves.csv");
    write_atomic(&curves_path, |w| write_curves_csv(&fit.curves, &band, w))?;
    if let Some(raw_path) = &args.raw_out {
        write_atomic(raw_path, |w| fit.raw.write_csv(w))?;
    }
    let n_used: Vec<_> = fit
        .raw
        .times
        .iter()
        .zip(&fit.raw.n_used)
        .map(|(t, n)| json!({ "time": t, "n": n }))
        .collect();
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "kernel": fit.curves.family,
            "bandwidths": fit.curves.bandwidths,
            "dt": fit.curves.dt,
            "eval_points": fit.curves.eval.len(),
            "n_arms": fit.curves.n_arms(),
            "n_used": n_used,
            "skipped": fit.raw.skipped,
            "dropped_subjects": report.dropped_subjects,
            "bootstrap": boot_failed.map(|failed| json!({
                "replicates": args.boot,
                "level": args.level,
                "seed": seed,
                "failed": failed,
            })),
        }),
    )?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "subcommand": "fit",
            "input": args.input.to_string_lossy(),
            "columns": columns_json(&schema),
            "kernel": fit.curves.family,
            "bandwidth": args.bandwidth,
            "dt": fit.curves.dt,
            "bootstrap": with_boot.then_some(json!({
                "replicates": args.boot,
                "level": args.level,
                "seed": seed,
            })),
            "outputs": {
                "curves": "curves.csv",
                "summary": "summary.json",
                "raw": args.raw_out.as_ref().map(|p| p.to_string_lossy()),
                "bootstrap_dump": args.bootstrap_dump.as_ref().map(|p| p.to_string_lossy()),
            },
        }),
    )?;
    eprintln!("wrote {}", curves_path.display());
    Ok(())
}

fn cmd_coverage(args: &CoverageArgs) -> Result<()> {
    // the per-replication seeds come from the master seed, so the
    // scenario's own seed is pinned to zero for a canonical manifest
    let scenario = resolve_scenario(&args.source, args.n, Some(0), args.dt)?;
    let master_seed = args.seed.unwrap_or_else(entropy_seed);
    let config = CoverageConfig {
        model_label: source_label(&args.source),
        scenario,
        replications: args.reps,
        check_times: parse_time_list(&args.check_times)?,
        boot: BootstrapConfig {
            replicates: args.boot,
            level: args.level,
            seed: 0,
            fit: FitConfig {
                smooth: SmoothConfig {
                    family: args.kernel,
                    bandwidth: match args.bandwidth {
                        Some(h) => BandwidthSelect::Fixed(h),
                        None => BandwidthSelect::RuleOfThumb,
                    },
                },
                dt: args.dt,
                ..FitConfig::default()
            },
            freeze_bandwidths: false,
            keep_replicates: false,
        },
        master_seed,
    };
    let outcome = coverage_experiment(&config)?;

    let table_path = args.out.join("coverage.csv");
    write_atomic(&table_path, |w| outcome.write_csv(w))?;
    let log_path = args.out.join("coverage_log.csv");
    write_atomic(&log_path, |w| outcome.write_log_csv(w))?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "subcommand": "coverage",
            "model": config.model_label,
            "scenario": config.scenario,
            "replications": args.reps,
            "check_times": config.check_times,
            "bootstrap": { "replicates": args.boot, "level": args.level },
            "kernel": args.kernel,
            "bandwidth": args.bandwidth,
            "dt": args.dt,
            "seed": master_seed,
            "outputs": { "coverage": "coverage.csv", "log": "coverage_log.csv" },
        }),
    )?;

    let mut table = Vec::new();
    outcome.write_csv(&mut table)?;
    std::io::stdout().write_all(&table)?;
    let failures = outcome.rows.first().map_or(0, |r| r.failures);
    if failures > 0 {
        eprintln!("warning: {failures} of {} replications failed", args.reps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmMetrics {
    pub arm: usize,
    pub made: f64,
    pub wase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsOutput {
    /// Mean across arms.
    pub made: f64,
    /// Mean across arms.
    pub wase: f64,
    pub per_arm: Vec<ArmMetrics>,
    /// Number of aligned time points compared.
    pub points: usize,
}

/// Align the estimate's times against the truth grid (exact match up to
/// round-trip noise) and compute range-normalized errors per arm.
fn compute_metrics(truth: &EtaCurve, estimate: &EtaCurve) -> Result<MetricsOutput> {
    if truth.eta.len() != estimate.eta.len() {
        return Err(Error::GridMismatch(format!(
            "truth has {} arm(s), estimate has {}",
            truth.eta.len(),
            estimate.eta.len()
        )));
    }
    let mut pairs = Vec::with_capacity(estimate.times.len());
    for (p, &t) in estimate.times.iter().enumerate() {
        let matched = truth
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0));
        match matched {
            Some(q) => pairs.push((q, p)),
            None => {
                return Err(Error::GridMismatch(format!(
                    "estimate time {t} has no matching truth time"
                )))
            }
        }
    }
    let mut per_arm = Vec::with_capacity(truth.eta.len());
    for arm in 0..truth.eta.len() {
        let t: Vec<f64> = pairs.iter().map(|&(q, _)| truth.eta[arm][q]).collect();
        let e: Vec<f64> = pairs.iter().map(|&(_, p)| estimate.eta[arm][p]).collect();
        let (made, wase) = made_wase(&t, &e)?;
        per_arm.push(ArmMetrics {
            arm: arm + 1,
            made,
            wase,
        });
    }
    let k = per_arm.len() as f64;
    Ok(MetricsOutput {
        made: per_arm.iter().map(|a| a.made).sum::<f64>() / k,
        wase: per_arm.iter().map(|a| a.wase).sum::<f64>() / k,
        per_arm,
        points: pairs.len(),
    })
}

fn read_eta_file(path: &Path) -> Result<EtaCurve> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::malformed(format!("cannot read {}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or("");
    let column = if header.split(',').any(|h| h.trim() == "eta_hat") {
        "eta_hat"
    } else {
        "eta_true"
    };
    read_eta_csv(text.as_bytes(), column).map_err(|e| match e {
        Error::MalformedInput(msg) => Error::malformed(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let truth = read_eta_file(&args.truth)?;
    let estimate = read_eta_file(&args.estimate)?;
    let metrics = compute_metrics(&truth, &estimate)?;
    write_json(&args.out.join("metrics.json"), &metrics)?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "subcommand": "metrics",
            "truth": args.truth.to_string_lossy(),
            "estimate": args.estimate.to_string_lossy(),
            "outputs": { "metrics": "metrics.json" },
        }),
    )?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}
