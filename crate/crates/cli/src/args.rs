//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::{commands, CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mxcast", version, about = "Joint trajectory and head-pose forecasting")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs on any machine.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override any config key, e.g. `--set hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trajectory file.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Forecast the pedestrians observed from a given frame.
    Forecast(ForecastArgs),
    /// Score a checkpoint on sliding windows of a trajectory file.
    Evaluate(EvaluateArgs),
    /// Head/motion alignment statistics of a trajectory file.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub pedestrians: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frames by which head turns precede path turns.
    #[arg(long)]
    pub lead: Option<usize>,
    /// Head-angle jitter, degrees.
    #[arg(long)]
    pub head_noise: Option<f64>,
    /// Position jitter, meters.
    #[arg(long)]
    pub position_noise: Option<f64>,
    #[arg(long)]
    pub speed_min: Option<f64>,
    #[arg(long)]
    pub speed_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability of feeding back the model's own prediction.
    #[arg(long)]
    pub sampling: Option<f64>,
    /// Head-angle jitter redrawn every epoch, degrees.
    #[arg(long)]
    pub augment_sigma: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `mean` or `sampled`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `predicted` or `ground_truth`.
    #[arg(long)]
    pub neighbors: Option<String>,
    /// Gaussian head-pose noise added to the inputs, degrees.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// First observed frame.
    #[arg(long)]
    pub start_frame: i64,
    /// Replace every observed head angle, degrees.
    #[arg(long)]
    pub override_deg: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub rollout: RolloutArgs,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Per-pedestrian CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Minimum speed, m/s.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Bin half-width as a fraction of the speed range.
    #[arg(long)]
    pub bin_frac: Option<f64>,
    /// Directory for `bins.csv` and `tracks.csv`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Largest head-to-motion lag scanned, frames.
    #[arg(long, default_value_t = 6)]
    pub max_lag: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probed weights per block.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

type Overrides = Vec<(&'static str, Option<String>)>;

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|v| v.to_string())
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|v| v.display().to_string())
}

impl RolloutArgs {
    fn overrides(&self) -> Overrides {
        vec![
            ("checkpoint", p(&self.checkpoint)),
            ("data", p(&self.data)),
            ("rollout", s(&self.mode)),
            ("neighbors", s(&self.neighbors)),
            ("noise_sigma_deg", s(&self.noise_sigma)),
            ("seed", s(&self.seed)),
        ]
    }
}

impl Command {
    fn overrides(&self) -> Overrides {
        match self {
            Command::Synth(a) => vec![
                ("scenario", s(&a.scenario)),
                ("episodes", s(&a.episodes)),
                ("pedestrians", s(&a.pedestrians)),
                ("frames", s(&a.frames)),
                ("head_lead", s(&a.lead)),
                ("synth_head_noise_deg", s(&a.head_noise)),
                ("position_noise", s(&a.position_noise)),
                ("speed_min", s(&a.speed_min)),
                ("speed_max", s(&a.speed_max)),
                ("seed", s(&a.seed)),
                ("output", p(&a.output)),
            ],
            Command::Train(a) => vec![
                ("data", p(&a.data)),
                ("checkpoint", p(&a.checkpoint)),
                ("variant", s(&a.variant)),
                ("epochs", s(&a.epochs)),
                ("hidden", s(&a.hidden)),
                ("batch_size", s(&a.batch_size)),
                ("learning_rate", s(&a.lr)),
                ("l2", s(&a.l2)),
                ("seed", s(&a.seed)),
                ("sampling_probability", s(&a.sampling)),
                ("augment_sigma_deg", s(&a.augment_sigma)),
                ("window_stride", s(&a.stride)),
                ("loss_log", p(&a.loss_log)),
            ],
            Command::Forecast(a) => {
                let mut o = a.rollout.overrides();
                o.push(("output", p(&a.output)));
                o
            }
            Command::Evaluate(a) => {
                let mut o = a.rollout.overrides();
                o.push(("window_stride", s(&a.stride)));
                o.push(("report", p(&a.report)));
                o
            }
            Command::Analyze(a) => vec![
                ("data", p(&a.data)),
                ("velocity_threshold", s(&a.threshold)),
                ("bin_half_width", s(&a.bin_frac)),
                ("output", p(&a.output)),
            ],
            Command::Gradcheck(a) => vec![("seed", s(&a.seed))],
            Command::Config => Vec::new(),
        }
    }
}

fn usage(message: String) -> CliError {
    CliError::Usage(message)
}

/// Resolves the configuration: defaults, environment, file, `--set`, flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    for (k, v) in cli.command.overrides() {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure threads: {e}")))?;
    }
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Synth(_) => commands::synth(&cfg).map(drop),
        Command::Train(a) => commands::train(&cfg, a.resume.as_deref()).map(drop),
        Command::Forecast(a) => commands::forecast_cmd(&cfg, a.start_frame, a.override_deg).map(drop),
        Command::Evaluate(_) => commands::evaluate_cmd(&cfg).map(drop),
        Command::Analyze(a) => commands::analyze(&cfg, a.max_lag).map(drop),
        Command::Gradcheck(a) => commands::gradcheck(cfg.seed, a.probes, a.corrupt_gradient).map(drop),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}
