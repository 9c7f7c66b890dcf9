mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

/// Sensor placement and physics-informed attack detection for power grids.
#[derive(Parser, Debug)]
#[command(name = "gridsense", version, about)]
pub struct Cli {
    /// Worker threads (defaults to GRIDSENSE_WORKERS, then all cores).
    #[arg(long, global = true, env = "GRIDSENSE_WORKERS")]
    pub workers: Option<usize>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one power flow per timestamp and write the benign frames.
    Simulate(SimulateArgs),
    /// Write attacked frames for a dataset.
    Attack(AttackArgs),
    /// Print the per-bus centralities and combined importance score.
    Importance(ImportanceArgs),
    /// Run the closed-loop placement search.
    Optimize(ExperimentArgs),
    /// Train and stress-test detectors for a set of placements.
    Evaluate(EvaluateArgs),
    /// Compare state-estimation errors of two layouts.
    Psse(PsseArgs),
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Bundled case name (case14, case30, ...) or path to a case file.
    #[arg(long, default_value = "case14")]
    pub case: String,
    /// Number of timestamps.
    #[arg(long, short = 'T', default_value_t = 200)]
    pub timestamps: usize,
    /// Seed of the load profile.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the per-bus load noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Amplitude of the daily load curve.
    #[arg(long, default_value_t = 0.1)]
    pub amplitude: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Output file; `.jsonl` selects JSON lines, anything else CSV.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindArg {
    Random,
    General,
    Lr,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Attack family.
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Attack magnitude for random and general attacks.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Fraction of buses targeted.
    #[arg(long, default_value_t = 0.3)]
    pub fraction: f64,
    /// Largest relative load shift of a load redistribution attack.
    #[arg(long, default_value_t = 0.2)]
    pub tau_max: f64,
    /// Seed of the attack draws.
    #[arg(long, default_value_t = 0)]
    pub attack_seed: u64,
    /// Read benign frames from this file instead of simulating
    /// (random and general attacks only).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Interleave the benign frame before each attacked frame.
    #[arg(long)]
    pub with_benign: bool,
    /// Output file; `.jsonl` selects JSON lines, anything else CSV.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImportanceArgs {
    /// Bundled case name or path to a case file.
    pub case: String,
    /// Weights of betweenness, eigenvector, electrical betweenness and
    /// coupling degree.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.25, 0.25, 0.25, 0.25])]
    pub weights: Vec<f64>,
    /// CSV output file (stdout when absent).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ExperimentArgs {
    /// Experiment config (TOML, or JSON with a `.json` extension).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides the config's case.
    #[arg(long)]
    pub case: Option<String>,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Overrides the number of timestamps.
    #[arg(long)]
    pub timestamps: Option<usize>,
    /// Overrides the population size.
    #[arg(long)]
    pub pop: Option<usize>,
    /// Overrides the number of generations.
    #[arg(long)]
    pub generations: Option<usize>,
    /// Overrides the detector training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the failure trials per level.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Use the cosine form of the reactive residual instead of the sine
    /// form.
    #[arg(long)]
    pub paper_verbatim_lq: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Placement JSON (results file, `{method, buses}`, `{buses}` or an
    /// array of 1-based bus numbers). Baseline only when absent.
    #[arg(long, short)]
    pub placement: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PsseArgs {
    /// Bundled case name or path to a case file.
    pub case: String,
    /// Placement to assess.
    #[arg(long, short)]
    pub placement: PathBuf,
    /// Reference placement (baseline metering only when absent).
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Method to pick from a results file with several placements.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of frames to estimate.
    #[arg(long, short = 'T', default_value_t = 50)]
    pub timestamps: usize,
    /// Measurement noise standard deviation (p.u.).
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-frame error CSV (stdout when absent).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
