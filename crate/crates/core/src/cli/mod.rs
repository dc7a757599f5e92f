//! The `acd` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or statistical failure, 2 bad usage or
//! bad input.

pub mod ingest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acd_model::{alpha_for_kappa, design_tail_index, AcdParams};
use crate::error::{AcdError, Result};
use crate::harness::{
    run_counting_experiment, run_qmle_experiment, Design, ExperimentConfig, ExperimentReport,
    Normalization, RemainderMode,
};
use crate::mle::{fit, EstimationResult, FitOptions, X0Policy};
use crate::report::{to_json_pretty, write_csv_pairs, Versioned};
use crate::rng::{make_stream, InnovationSpec};
use crate::sim::{
    calibrate_omega_for_median, simulate_fixed_count, simulate_fixed_span, DEFAULT_BURN_IN,
};
use crate::tail::{default_k, hill_estimator, hill_path, log_k_grid, TailEstimate, TailRegime};

pub use ingest::{ingest_event_times, load_series, IngestOptions, ZeroPolicy};

/// Environment variable holding the default worker count for `mc`.
pub const WORKERS_ENV: &str = "ACD_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "acd",
    version,
    about = "Simulate, fit and diagnose ACD(1) duration models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a duration series and write it as a `t,x` CSV.
    Simulate(SimulateArgs),
    /// Quasi-maximum-likelihood fit of (omega, alpha).
    Fit(FitArgs),
    /// Hill tail-index estimate and regime verdict.
    Tail(TailArgs),
    /// Monte Carlo experiment for a counting or estimator limit law.
    Mc(McArgs),
    /// Tail diagnosis plus fit of an event-time file.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Event-time file (one timestamp per line, or CSV with a `t` column) or a
    /// `t,x` CSV written by `simulate`.
    pub input: PathBuf,
    /// What to do with simultaneous events: error, merge or jitter:EPS.
    #[arg(long, default_value = "error")]
    pub zero_policy: ZeroPolicy,
    /// Use the first timestamp as the origin rather than as an event.
    #[arg(long)]
    pub skip_first: bool,
    /// Factor converting file time units to model units.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// End of the observation window in file units (default: last event).
    #[arg(long)]
    pub span: Option<f64>,
}

impl InputArgs {
    fn load(&self) -> Result<crate::sim::DurationSeries> {
        load_series(
            &self.input,
            &IngestOptions {
                zero_policy: self.zero_policy,
                skip_first: self.skip_first,
                time_scale: self.time_scale,
                span: self.span,
            },
        )
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, conflicts_with = "kappa")]
    pub alpha: Option<f64>,
    /// Tail index; alpha is set to Gamma(kappa+1)^(-1/kappa).
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Calibrate omega so the median duration is one.
    #[arg(long, conflicts_with = "omega")]
    pub median_one: bool,
    /// Observation span T.
    #[arg(long, required_unless_present = "count", conflicts_with = "count")]
    pub span: Option<f64>,
    /// Fixed number of events instead of a span.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    /// Innovations: `exponential` or `gamma:SHAPE` (unit mean).
    #[arg(long, default_value = "exponential")]
    pub innovation: String,
    /// Output CSV (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Metadata JSON (default: the output path with a .json extension).
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum X0Arg {
    SampleMean,
    StationaryMean,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Include the censored-duration remainder term (needs a span).
    #[arg(long)]
    pub remainder: bool,
    /// Adds the t-ratio for H0: alpha = VALUE.
    #[arg(long)]
    pub null_alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "sample-mean", conflicts_with = "x0")]
    pub x0_policy: X0Arg,
    /// Fixed initial duration x_0.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Exit 0 even when the optimizer did not converge.
    #[arg(long)]
    pub allow_nonconverged: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TailArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of upper order statistics (default floor(n^0.6)).
    #[arg(long)]
    pub k: Option<usize>,
    /// Writes the Hill estimate over a log-spaced k grid as CSV.
    #[arg(long)]
    pub path_csv: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Counting,
    Qmle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RemainderArg {
    Include,
    Exclude,
    Both,
}

impl From<RemainderArg> for RemainderMode {
    fn from(r: RemainderArg) -> Self {
        match r {
            RemainderArg::Include => RemainderMode::Include,
            RemainderArg::Exclude => RemainderMode::Exclude,
            RemainderArg::Both => RemainderMode::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentArg>,
    #[arg(long, conflicts_with_all = ["omega", "alpha"])]
    pub kappa: Option<f64>,
    #[arg(long, requires = "alpha")]
    pub omega: Option<f64>,
    #[arg(long, requires = "omega")]
    pub alpha: Option<f64>,
    /// One of lln, clt_k_gt_2, stable_1_2, count_k_lt_1, qmle_sqrt_t, qmle_tk2, t_ratio.
    #[arg(long)]
    pub normalization: Option<String>,
    /// Comma-separated spans, e.g. 1e3,1e4,1e5.
    #[arg(long, value_delimiter = ',')]
    pub spans: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub remainder: Option<RemainderArg>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Draws per Monte Carlo limit constant.
    #[arg(long)]
    pub constant_samples: Option<usize>,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Report JSON (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Directory for per-span Q-Q and sample CSVs.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub remainder: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<AcdError> for CliError {
    fn from(e: AcdError) -> Self {
        CliError {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Tail(a) => cmd_tail(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn parse_innovation(s: &str) -> CliResult<InnovationSpec> {
    if s == "exponential" {
        return Ok(InnovationSpec::UnitExponential);
    }
    let shape = s
        .strip_prefix("gamma:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| {
            usage(format!(
                "unknown innovation {s:?} (exponential or gamma:SHAPE)"
            ))
        })?;
    Ok(InnovationSpec::unit_gamma(shape)?)
}

fn simulation_params(a: &SimulateArgs, spec: &InnovationSpec) -> CliResult<AcdParams> {
    let alpha = match (a.alpha, a.kappa) {
        (Some(alpha), None) => alpha,
        (None, Some(kappa)) => {
            if !spec.is_exponential() {
                return Err(usage(
                    "--kappa needs exponential innovations; pass --alpha instead",
                ));
            }
            alpha_for_kappa(kappa)?
        }
        _ => return Err(usage("give exactly one of --alpha or --kappa")),
    };
    if a.median_one {
        let probe = AcdParams::new(1.0, alpha)?;
        probe.check_stationary(spec)?;
        // Calibration draws from its own stream so the path stream is untouched.
        let mut stream = make_stream(a.seed, 3 << 48);
        let omega =
            calibrate_omega_for_median(alpha, spec, 1.0, 1_000_000, &mut stream, a.burn_in)?;
        return Ok(AcdParams::new(omega, alpha)?);
    }
    match a.omega {
        Some(omega) => Ok(AcdParams::new(omega, alpha)?),
        None if a.kappa.is_some_and(|k| k > 1.0) => Ok(AcdParams::new(1.0 - alpha, alpha)?),
        None => Err(usage(
            "--omega is required unless --median-one or --kappa > 1 (unit mean) is given",
        )),
    }
}

#[derive(Serialize)]
struct SimulationInfo<'a> {
    params: AcdParams,
    kappa: Option<f64>,
    n_events: usize,
    span: Option<f64>,
    true_next_psi: Option<f64>,
    initial_state: f64,
    provenance: &'a Option<crate::sim::SimulationMeta>,
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let spec = parse_innovation(&a.innovation)?;
    let params = simulation_params(&a, &spec)?;
    params.check_stationary(&spec)?;
    let mut stream = make_stream(a.seed, 0);
    let series = match (a.span, a.count) {
        (Some(span), None) => simulate_fixed_span(&params, &spec, span, &mut stream, a.burn_in)?,
        (None, Some(n)) => simulate_fixed_count(&params, &spec, n, &mut stream, a.burn_in)?,
        _ => return Err(usage("give exactly one of --span or --count")),
    };
    let kappa = if spec.is_exponential() {
        design_tail_index(&params, &spec).ok()
    } else {
        None
    };
    match &a.output {
        Some(p) => series.write_csv(BufWriter::new(File::create(p).map_err(AcdError::from)?))?,
        None => series.write_csv(std::io::stdout().lock())?,
    }
    let meta_path = a
        .meta
        .clone()
        .or_else(|| a.output.as_ref().map(|p| p.with_extension("json")));
    if let Some(meta_path) = meta_path {
        let info = SimulationInfo {
            params,
            kappa,
            n_events: series.len(),
            span: series.span,
            true_next_psi: series.true_next_psi,
            initial_state: series.initial_state,
            provenance: &series.provenance,
        };
        emit(
            Some(&meta_path),
            &to_json_pretty(&Versioned::new("simulation", info))?,
        )?;
    }
    log::info!("simulated {} events", series.len());
    Ok(())
}

fn fit_options(a: &FitArgs) -> FitOptions {
    let x0_policy = match (a.x0, a.x0_policy) {
        (Some(v), _) => X0Policy::Fixed(v),
        (None, X0Arg::SampleMean) => X0Policy::SampleMean,
        (None, X0Arg::StationaryMean) => X0Policy::StationaryMean,
    };
    FitOptions {
        x0_policy,
        include_remainder: a.remainder,
        null_alpha: a.null_alpha,
        ..FitOptions::default()
    }
}

/// A span must exist for the remainder term; default it to the last event.
fn with_span_for_remainder(
    mut series: crate::sim::DurationSeries,
    remainder: bool,
) -> crate::sim::DurationSeries {
    if remainder && series.span.is_none() {
        series.span = Some(series.last_time());
    }
    series
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let series = with_span_for_remainder(a.input.load()?, a.remainder);
    let result = fit(&series, &fit_options(&a))?;
    emit(
        a.output.as_deref(),
        &to_json_pretty(&Versioned::new("estimation", &result))?,
    )?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    check_converged(&result, a.allow_nonconverged)
}

fn check_converged(result: &EstimationResult, allow: bool) -> CliResult<()> {
    if result.converged || allow {
        Ok(())
    } else {
        Err(CliError {
            code: 1,
            message: format!(
                "optimizer did not converge after {} iterations (use --allow-nonconverged to accept)",
                result.iterations
            ),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TailReport {
    #[serde(flatten)]
    pub estimate: TailEstimate,
    pub regime: TailRegime,
    pub verdict: String,
}

fn tail_report(durations: &[f64], k: Option<usize>) -> Result<TailReport> {
    let k = k.unwrap_or_else(|| default_k(durations.len()));
    let estimate = hill_estimator(durations, k)?;
    let regime = TailRegime::classify(estimate.kappa_hat);
    Ok(TailReport {
        estimate,
        regime,
        verdict: regime.verdict().to_string(),
    })
}

fn cmd_tail(a: TailArgs) -> CliResult<()> {
    let series = a.input.load()?;
    let report = tail_report(&series.durations, a.k)?;
    if let Some(path) = &a.path_csv {
        let n = series.len();
        let hi = (n - 1).min(n / 2).max(1);
        let grid = log_k_grid(10.min(hi), hi, 40);
        let path_est = hill_path(&series.durations, &grid)?;
        let rows = path_est
            .hill_path
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (k as f64, v));
        let file = File::create(path).map_err(AcdError::from)?;
        write_csv_pairs(BufWriter::new(file), ("k", "kappa_hat"), rows)?;
    }
    emit(
        a.output.as_deref(),
        &to_json_pretty(&Versioned::new("tail", &report))?,
    )?;
    eprintln!(
        "kappa_hat = {:.4} (k = {}): {}",
        report.estimate.kappa_hat, report.estimate.k, report.verdict
    );
    Ok(())
}

/// `mc --config` file: every field optional, flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct McFile {
    experiment: Option<String>,
    design: Option<Design>,
    spans: Option<Vec<f64>>,
    replications: Option<usize>,
    seed: Option<u64>,
    normalization: Option<Normalization>,
    remainder_mode: Option<RemainderMode>,
    burn_in: Option<usize>,
    constant_samples: Option<usize>,
    calibration_samples: Option<usize>,
    reference_factor: Option<usize>,
    x0_policy: Option<X0Policy>,
    workers: Option<usize>,
}

fn mc_config(a: &McArgs) -> CliResult<(ExperimentArg, ExperimentConfig)> {
    let file: McFile = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(AcdError::from)?)
            .map_err(AcdError::from)?,
        None => McFile::default(),
    };
    let design = match (a.kappa, a.omega, a.alpha) {
        (Some(kappa), _, _) => Some(Design::Kappa { kappa }),
        (None, Some(omega), Some(alpha)) => Some(Design::Params { omega, alpha }),
        _ => file.design,
    }
    .ok_or_else(|| usage("no design: pass --kappa or --omega/--alpha"))?;
    let normalization = match &a.normalization {
        Some(s) => Some(
            Normalization::parse(s).ok_or_else(|| usage(format!("unknown normalization {s:?}")))?,
        ),
        None => file.normalization,
    };
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| usage("--seed is required (no wall-clock seeding)"))?;
    let file_experiment = match file.experiment.as_deref() {
        None => None,
        Some("counting") => Some(ExperimentArg::Counting),
        Some("qmle") => Some(ExperimentArg::Qmle),
        Some(other) => return Err(usage(format!("unknown experiment {other:?}"))),
    };
    let requested = a.experiment.or(file_experiment);
    let normalization = match (normalization, requested) {
        (Some(n), _) => n,
        (None, Some(e)) => default_normalization(e, &design)?,
        (None, None) => return Err(usage("give --normalization or --experiment")),
    };
    let implied = if normalization.is_counting() {
        ExperimentArg::Counting
    } else {
        ExperimentArg::Qmle
    };
    let experiment = requested.unwrap_or(implied);
    if experiment != implied {
        return Err(usage(format!(
            "normalization {} belongs to the {} experiment",
            normalization.name(),
            if implied == ExperimentArg::Counting {
                "counting"
            } else {
                "qmle"
            }
        )));
    }

    let mut cfg = ExperimentConfig::new(design, normalization, seed);
    cfg.spans = a.spans.clone().or(file.spans).unwrap_or(cfg.spans);
    cfg.replications = a.reps.or(file.replications).unwrap_or(cfg.replications);
    cfg.remainder_mode = a
        .remainder
        .map(Into::into)
        .or(file.remainder_mode)
        .unwrap_or(cfg.remainder_mode);
    cfg.burn_in = a.burn_in.or(file.burn_in).unwrap_or(cfg.burn_in);
    cfg.constant_samples = a
        .constant_samples
        .or(file.constant_samples)
        .unwrap_or(cfg.constant_samples);
    cfg.calibration_samples = file.calibration_samples.unwrap_or(cfg.calibration_samples);
    cfg.reference_factor = file.reference_factor.unwrap_or(cfg.reference_factor);
    cfg.x0_policy = file.x0_policy.unwrap_or(cfg.x0_policy);
    cfg.workers = a.workers.or(file.workers);
    cfg.validate()?;
    Ok((experiment, cfg))
}

/// The normalization matching the design's tail regime.
fn default_normalization(experiment: ExperimentArg, design: &Design) -> CliResult<Normalization> {
    let kappa = match *design {
        Design::Kappa { kappa } => kappa,
        Design::Params { omega, alpha } => design_tail_index(
            &AcdParams::new(omega, alpha)?,
            &InnovationSpec::UnitExponential,
        )?,
    };
    Ok(match experiment {
        ExperimentArg::Counting if kappa > 2.0 => Normalization::CltKGt2,
        ExperimentArg::Counting if kappa > 1.0 => Normalization::Stable12,
        ExperimentArg::Counting => Normalization::CountKLt1,
        ExperimentArg::Qmle if kappa > 1.0 => Normalization::QmleSqrtT,
        ExperimentArg::Qmle => Normalization::QmleTk2,
    })
}

fn span_tag(index: usize, span: f64) -> String {
    format!("span{index}_T{span}")
}

fn write_mc_csvs(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in report.spans.iter().enumerate() {
        let tag = span_tag(i, s.span);
        if let Some(qq) = &s.qq {
            let f = File::create(dir.join(format!("qq_{tag}.csv")))?;
            write_csv_pairs(
                BufWriter::new(f),
                ("empirical", "reference"),
                qq.pairs.iter().copied(),
            )?;
        }
        let f = File::create(dir.join(format!("samples_{tag}.csv")))?;
        let rows = s.samples.iter().enumerate().map(|(j, &v)| (j as f64, v));
        write_csv_pairs(BufWriter::new(f), ("index", "statistic"), rows)?;
    }
    Ok(())
}

fn cmd_mc(a: McArgs) -> CliResult<()> {
    let (experiment, cfg) = mc_config(&a)?;
    let spec = InnovationSpec::UnitExponential;
    let report = match experiment {
        ExperimentArg::Counting => run_counting_experiment(&cfg, &spec)?,
        ExperimentArg::Qmle => run_qmle_experiment(&cfg, &spec)?,
    };
    emit(
        a.output.as_deref(),
        &to_json_pretty(&Versioned::new("experiment", &report))?,
    )?;
    if let Some(dir) = &a.csv_dir {
        write_mc_csvs(dir, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisReport<'a> {
    n_events: usize,
    span: f64,
    mean_duration: f64,
    median_duration: f64,
    tail: &'a TailReport,
    fit: Option<&'a EstimationResult>,
    fit_error: Option<String>,
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let series = with_span_for_remainder(a.input.load()?, a.remainder);
    let tail = tail_report(&series.durations, a.k)?;
    let options = FitOptions {
        include_remainder: a.remainder,
        ..FitOptions::default()
    };
    let (fitted, fit_error) = match fit(&series, &options) {
        Ok(r) => (Some(r), None),
        Err(e) if e.is_input_error() => return Err(e.into()),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = AnalysisReport {
        n_events: series.len(),
        span: series.horizon(),
        mean_duration: series.sample_mean(),
        median_duration: crate::stats::median(&series.durations),
        tail: &tail,
        fit: fitted.as_ref(),
        fit_error,
    };
    emit(
        a.output.as_deref(),
        &to_json_pretty(&Versioned::new("analysis", &report))?,
    )?;
    eprintln!(
        "kappa_hat = {:.4} (k = {}): {}",
        tail.estimate.kappa_hat, tail.estimate.k, tail.verdict
    );
    if let Some(r) = &fitted {
        eprintln!(
            "omega_hat = {:.6}, alpha_hat = {:.6}{}",
            r.theta_hat.omega,
            r.theta_hat.alpha,
            if r.converged { "" } else { " (not converged)" }
        );
    }
    Ok(())
}
