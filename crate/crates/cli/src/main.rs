mod commands;
mod config;
mod error;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::CliError;
use quickdetect::detectors::DetectorKind;
use serde::Serialize;
use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "quickdetect",
    version,
    about = "Quickest detection of a mean shift in N(mu, a*mu) data with CUSUM and Shiryaev-Roberts procedures",
    args_override_self = true
)]
pub struct Cli {
    /// Configuration file with `key = value` lines naming long flags; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Maximum number of worker threads
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Random seed for every simulation
    #[arg(long, global = true, env = "QD_SEED", default_value_t = 20240601)]
    pub seed: u64,
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write the output to this file
    #[arg(long, short, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Find the threshold giving a target ARL to false alarm
    Calibrate(CalibrateArgs),
    /// Operating characteristics from the integral-equation solver
    Oc(OcArgs),
    /// Monte-Carlo estimates of the renewal constants and the practical SR-r head start
    Constants(ConstantsArgs),
    /// Multi-cyclic detection over a packet-rate trace
    Detect(DetectArgs),
    /// Monte-Carlo operating characteristics of a procedure
    Simulate(SimulateArgs),
    /// Recompute the benchmark tables and compare with the reference values
    Tables(TablesArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Calibrate(_) => "calibrate",
            Self::Oc(_) => "oc",
            Self::Constants(_) => "constants",
            Self::Detect(_) => "detect",
            Self::Simulate(_) => "simulate",
            Self::Tables(_) => "tables",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Pre-change mean
    #[arg(long)]
    pub mu: f64,
    /// Post-change mean
    #[arg(long)]
    pub theta: f64,
    /// Variance-to-mean ratio
    #[arg(long)]
    pub a: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct TargetArgs {
    /// Target ARL to false alarm; the threshold is calibrated to it
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Explicit detection threshold A
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Number of collocation panels
    #[arg(long, default_value_t = 2000)]
    pub panels: usize,
    /// Relative ARL tolerance of threshold calibration
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    /// The grid is doubled while the ARL moves by more than this (relative) between N and 2N
    #[arg(long, default_value_t = 1e-3)]
    pub grid_tol: f64,
    /// Largest grid the doubling check may reach; set equal to --panels to skip the check
    #[arg(long, default_value_t = 4000)]
    pub max_panels: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    /// cusum, sr, srp or sr-r
    #[arg(long)]
    pub procedure: DetectorKind,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Starting value of SR-r
    #[arg(long, default_value_t = 0.0)]
    pub head_start: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct OcArgs {
    /// cusum, sr, srp or sr-r
    #[arg(long)]
    pub procedure: DetectorKind,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Starting value of SR-r
    #[arg(long, default_value_t = 0.0)]
    pub head_start: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Change points at which to report ADD, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub nu: Vec<usize>,
    /// Longest delay profile computed while searching for the supremum
    #[arg(long, default_value_t = 100_000)]
    pub nu_max: usize,
    /// Relative tolerance at which the delay profile counts as settled
    #[arg(long, default_value_t = 1e-6)]
    pub profile_tol: f64,
    /// Write `nu,ADD` for every change point up to the largest requested one
    #[arg(long, value_name = "FILE")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct ConstantsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Simulated walks per hypothesis
    #[arg(long, default_value_t = 1_000_000)]
    pub paths: usize,
    /// Steps per walk
    #[arg(long, default_value_t = 10_000)]
    pub horizon: usize,
    /// Batches for the standard errors
    #[arg(long, default_value_t = 100)]
    pub batches: usize,
    /// Extend the series and path functionals beyond the horizon
    #[arg(long)]
    pub tail_correction: bool,
    /// Head starts at which to report C_r, comma separated
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct DetectArgs {
    /// Trace CSV with columns time_s,packets_per_s
    #[arg(long, value_name = "FILE", required_unless_present = "surrogate", conflicts_with = "surrogate")]
    pub trace: Option<PathBuf>,
    /// Use a synthetic 879-sample trace with an attack at sample 204 (drawn with --seed)
    #[arg(long)]
    pub surrogate: bool,
    /// cusum, sr, srp or sr-r
    #[arg(long)]
    pub procedure: DetectorKind,
    /// Pre-change mean; estimated from --fit-window when absent
    #[arg(long)]
    pub mu: Option<f64>,
    /// Post-change mean
    #[arg(long)]
    pub theta: Option<f64>,
    /// Variance-to-mean ratio; estimated from --fit-window when absent
    #[arg(long)]
    pub a: Option<f64>,
    /// Legitimate-traffic window START:END used to estimate mu and a
    #[arg(long, value_parser = parse_window)]
    pub fit_window: Option<Window>,
    /// Index of the first post-change sample
    #[arg(long)]
    pub onset: Option<usize>,
    /// Attack window START:END rescaled by --diminish
    #[arg(long, value_parser = parse_window)]
    pub attack_window: Option<Window>,
    /// Rescale the attack window to this mean and the legitimate variance-to-mean ratio
    #[arg(long)]
    pub diminish: Option<f64>,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Starting value of SR-r
    #[arg(long, default_value_t = 0.0)]
    pub head_start: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Write normal Q-Q pairs of the fit window to this file
    #[arg(long, value_name = "FILE")]
    pub gof: Option<PathBuf>,
    /// Write the detection statistic after every sample to this file
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
    /// SRP only: reuse the first head-start draw after every alarm instead of redrawing
    #[arg(long)]
    pub keep_head_start: bool,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// cusum, sr, srp or sr-r
    #[arg(long)]
    pub procedure: DetectorKind,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Starting value of SR-r
    #[arg(long, default_value_t = 0.0)]
    pub head_start: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Runs per estimate
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub replications: u64,
    /// Change points at which to estimate ADD, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub nu: Vec<u64>,
    /// Change point of multi-cyclic runs estimating the stationary delay
    #[arg(long)]
    pub stadd_nu: Option<u64>,
    /// Runs longer than this are censored
    #[arg(long, default_value_t = 100_000_000)]
    pub cap: u64,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TablesArgs {
    /// Panels for the a = 0.01 case
    #[arg(long, default_value_t = 4000)]
    pub panels_small: usize,
    /// Panels for the a = 1 case
    #[arg(long, default_value_t = 2000)]
    pub panels_unit: usize,
    /// Write one delay-profile CSV per case into this directory
    #[arg(long, value_name = "DIR")]
    pub plot_dir: Option<PathBuf>,
    /// Only run the a = 1 case
    #[arg(long)]
    pub unit_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let start: usize = a.trim().parse().map_err(|_| format!("bad window start {a:?}"))?;
    let end: usize = b.trim().parse().map_err(|_| format!("bad window end {b:?}"))?;
    if end <= start {
        return Err(format!("window end {end} must exceed start {start}"));
    }
    Ok(Window { start, end })
}

fn run() -> Result<(), CliError> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { Err(CliError::Reported(2)) } else { Ok(()) };
        }
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set thread count: {e}")))?;
    }
    let report = commands::run(&cli)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = match cli.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    print!("{text}");
    if let Some(path) = &cli.output {
        std::fs::write(path, &text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Reported(code)) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
