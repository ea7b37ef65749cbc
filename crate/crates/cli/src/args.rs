use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stoq::ssmc::WalkerMode;

/// Stoquastic adiabatic optimisation versus Substochastic Monte Carlo on
/// Hamming-weight-symmetric problems.
#[derive(Debug, Parser)]
#[command(name = "stoq", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output path; `-` writes to standard output. A file output gets a
    /// `<path>.manifest.json` sidecar.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,
    /// Master seed.
    #[arg(long, global = true, env = "STOQ_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gap curve γ(s) and its minimum for one instance.
    Gap(GapArgs),
    /// Adiabatic cost 1/γ_min² over a list of sizes, with a log-log fit.
    QuantumCost(QuantumCostArgs),
    /// Substochastic Monte Carlo runs and experiments.
    #[command(subcommand)]
    Ssmc(SsmcCommand),
    /// Closed-form double-well predictions.
    #[command(subcommand)]
    Predict(PredictCommand),
    /// Spike-barrier comparison.
    #[command(subcommand)]
    Spike(SpikeCommand),
}

/// A problem from a JSON config, or the default double well at `--n`.
#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// JSON problem config.
    pub config: Option<PathBuf>,
    /// Qubit count (overrides the config).
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    /// JSON problem config.
    pub config: PathBuf,
    /// Qubit count (overrides the config).
    #[arg(long)]
    pub n: Option<usize>,
    /// Coarse scan points over s ∈ [0, 1].
    #[arg(long, default_value_t = stoq::spectral::DEFAULT_COARSE_POINTS)]
    pub s_points: usize,
}

#[derive(Debug, Args)]
pub struct QuantumCostArgs {
    /// JSON problem config (default: double well).
    pub config: Option<PathBuf>,
    /// Sizes, e.g. `1000,2000,4000` or `1000:1000:8000`.
    #[arg(long)]
    pub n_list: String,
    #[arg(long, default_value_t = stoq::spectral::DEFAULT_COARSE_POINTS)]
    pub s_points: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    /// One stored position per walker.
    Walkers,
    /// Walker counts per Hamming weight.
    Counts,
}

impl From<Mode> for WalkerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Walkers => WalkerMode::Walkers,
            Mode::Counts => WalkerMode::Counts,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Anneal length in steps (overrides the config).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step size (overrides the config; default chosen from the potential).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Counts)]
    pub mode: Mode,
}

#[derive(Debug, Subcommand)]
pub enum SsmcCommand {
    /// Independent anneals, one JSON line per trial.
    Run(RunArgs),
    /// Walker count giving a 70–75% success rate.
    Calibrate(CalibrateArgs),
    /// Calibrated cost over a list of sizes.
    Series(SeriesArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 1000)]
    pub walkers: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Record the weight histogram every k steps.
    #[arg(long, value_name = "K")]
    pub snapshots: Option<usize>,
    /// Also write snapshot histograms, summed over trials, as CSV.
    #[arg(long, value_name = "PATH", requires = "snapshots")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrationArgs {
    /// Trials per probe.
    #[arg(long, default_value_t = stoq::harness::DEFAULT_TRIALS_PER_REP)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub min_walkers: usize,
    #[arg(long, default_value_t = stoq::harness::DEFAULT_WALKER_CAP)]
    pub max_walkers: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// JSON problem config used as a template for every size.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_list: String,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[arg(long, default_value_t = stoq::harness::DEFAULT_REPETITIONS)]
    pub repetitions: usize,
    /// Also write one JSON line per cost point.
    #[arg(long, value_name = "PATH")]
    pub jsonl: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PredictCommand {
    /// Tight-binding gap against the exact gap at s = ½.
    TbGap(PredictArgs),
    /// Right-well mass P_R, exact sum and closed form.
    Pr(PredictArgs),
    /// Weight distribution D(w) as CSV.
    Dist(DistArgs),
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON double-well config (default parameters otherwise).
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "n_list")]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_list: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WellArg {
    Left,
    Right,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Annealing parameter (used with `--exact`).
    #[arg(long, default_value_t = 0.25)]
    pub s: f64,
    /// Use the exact ground state at `--s` instead of a Gaussian well state.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum, default_value_t = WellArg::Left)]
    pub well: WellArg,
}

#[derive(Debug, Subcommand)]
pub enum SpikeCommand {
    /// Adiabatic cost on spike instances.
    Gap(SpikeGapArgs),
    /// SSMC cost with fixed walkers and a step count linear in n.
    Ssmc(SpikeSsmcArgs),
    /// Both series and their fitted power-law exponents.
    Compare(SpikeCompareArgs),
}

#[derive(Debug, Args)]
pub struct SpikeGapArgs {
    #[arg(long, default_value_t = stoq::potentials::SpikeParams::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub n_list: String,
    #[arg(long, default_value_t = stoq::spectral::DEFAULT_COARSE_POINTS)]
    pub s_points: usize,
}

#[derive(Debug, Args)]
pub struct SpikeSsmcArgs {
    #[arg(long, default_value_t = stoq::potentials::SpikeParams::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub n_list: String,
    #[arg(long, default_value_t = stoq::harness::SPIKE_WALKERS)]
    pub walkers: usize,
    #[arg(long, default_value_t = 100)]
    pub steps_per_n: usize,
    #[arg(long, default_value_t = stoq::harness::DEFAULT_SCHEDULE_STEPS)]
    pub min_steps: usize,
    #[arg(long, default_value_t = 2)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 25)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = Mode::Counts)]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct SpikeCompareArgs {
    #[command(flatten)]
    pub ssmc: SpikeSsmcArgs,
    #[arg(long, default_value_t = stoq::spectral::DEFAULT_COARSE_POINTS)]
    pub s_points: usize,
}
