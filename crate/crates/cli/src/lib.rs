//! `detcal` command-line interface.
//!
//! [`run`] parses arguments, executes one subcommand on a worker pool sized
//! by `DETCAL_THREADS`, and returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage: bad flag, bad option value, invalid configuration |
//! | 3 | data: missing or malformed input files |
//! | 4 | numeric: a covariance that is not positive definite, etc. |

mod commands;
mod config;
mod dataset;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use detcal::io::report::ReportFormat;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "DETCAL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "detcal", version, about = "Detection evaluation and confidence calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a motion-blurred and a horizontally flipped copy of every image
    Augment(AugmentArgs),
    /// Per-detection matching outcomes
    Match(MatchArgs),
    /// Precision, recall and F1 per image and overall
    Metrics(MatchArgs),
    /// Expected calibration error of detection confidences
    Ece(EceArgs),
    /// Per-bin precision against mean confidence
    Reliability(EceArgs),
    /// Fit a calibration model on the fit split of a dataset
    CalibrateFit(FitArgs),
    /// Rewrite detection confidences through a fitted model
    CalibrateApply(ApplyArgs),
    /// Generate a synthetic dataset with a known miscalibration
    Simulate(SimulateArgs),
    /// Match, split, fit, apply and report before/after ECE
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Minimum IoU for a detection to count as correct
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Format written to stdout: csv, table or json-lines
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    /// Directory for report.csv, report.txt and config.toml
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CalibArgs {
    /// Comma-separated features from conf, cx, cy, w, h
    #[arg(long, default_value = "conf,cx,cy")]
    features: String,
    /// Use logit(confidence) instead of the raw confidence
    #[arg(long)]
    logit_confidence: bool,
    /// Ridge added to both covariance diagonals
    #[arg(long = "lambda", default_value_t = detcal::calibration::DEFAULT_LAMBDA_REG)]
    lambda: f64,
    /// Add log(n+/n-) so outputs reflect the observed correct fraction
    #[arg(long)]
    with_prior_term: bool,
    /// Fraction of detections used for fitting; the rest are evaluated
    #[arg(long, default_value_t = 0.6)]
    fit_fraction: f64,
    /// Seed for the fit/test shuffle
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct MatchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct EceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of equal-width confidence bins
    #[arg(long, default_value_t = detcal::ece::DEFAULT_BINS)]
    bins: usize,
    /// Calibrate confidences with this model first
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    calib: CalibArgs,
    #[arg(long, default_value_t = detcal::ece::DEFAULT_BINS)]
    bins: usize,
    /// Where to write the fitted model
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct ApplyArgs {
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Fitted model file
    #[arg(long)]
    model: PathBuf,
    /// Directory for the calibrated detections and manifest
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args, Debug, Clone)]
struct AugmentArgs {
    /// Dataset manifest; every entry needs an image
    #[arg(long)]
    manifest: PathBuf,
    /// Blur kernel length in pixels (odd, at least 3)
    #[arg(long, default_value_t = 7)]
    blur_length: usize,
    /// Blur direction in degrees counter-clockwise from +x
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    blur_angle: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    /// TOML file with any of the settings below; flags take precedence
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of scenes (default 1000)
    #[arg(long)]
    scenes: Option<usize>,
    /// Generate whole scenes until at least this many detections exist
    #[arg(long, conflicts_with = "scenes")]
    detections: Option<usize>,
    /// Ground-truth boxes per scene, `N` or `LO-HI` (default 1-4)
    #[arg(long)]
    truths: Option<String>,
    /// Center jitter of true hits, in normalized units (default 0.01)
    #[arg(long)]
    jitter: Option<f64>,
    /// P(correct | confidence): identity, power:G or affine:A,B (default identity)
    #[arg(long)]
    link: Option<String>,
    /// Mean of the latent confidence logit (default 1)
    #[arg(long, allow_negative_numbers = true)]
    logit_mean: Option<f64>,
    /// Std-dev of the latent confidence logit (default 1)
    #[arg(long)]
    logit_sd: Option<f64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Dataset manifest; repeat to compare several detectors
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Row label per manifest (defaults to the manifest file stem)
    #[arg(long)]
    label: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[command(flatten)]
    calib: CalibArgs,
    #[arg(long, default_value_t = detcal::ece::DEFAULT_BINS)]
    bins: usize,
    #[command(flatten)]
    output: OutputArgs,
}

/// What a finished command hands back for printing.
#[derive(Debug, Default)]
struct Output {
    stdout: String,
    warnings: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(detcal::Error),
}

impl From<detcal::Error> for CliError {
    fn from(e: detcal::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        use detcal::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::Spec(_) | E::Split(_)) => EXIT_USAGE,
            CliError::Core(E::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n = v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

/// Run with the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Run with caller-supplied output streams. `args[0]` is the program name.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| commands::execute(cli.command)));
    match result {
        Ok(out) => {
            let _ = stdout.write_all(out.stdout.as_bytes());
            for w in &out.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            let _ = stdout.flush();
            if out.warnings.is_empty() {
                EXIT_OK
            } else {
                EXIT_DATA
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
