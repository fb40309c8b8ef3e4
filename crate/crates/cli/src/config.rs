//! Run configuration and its `key = value` file format.
//!
//! Values are resolved in the order defaults, `MXCAST_SEED`, config file,
//! command-line flags; each later source overrides the earlier ones.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mxcast::data::{Scenario, SyntheticSpec};
use mxcast::model::{ForecastOptions, Hyperparams, NeighborSource, RolloutMode, TrainConfig, Variant};
use mxcast::nn::AdamConfig;
use mxcast::pooling::GridSpec;
use mxcast::types::{DEFAULT_FRAME_PERIOD, DEFAULT_VISLET_RADIUS};

use crate::CliError;

/// Environment variable consulted for the seed when no file or flag sets it.
pub const SEED_ENV: &str = "MXCAST_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Hidden and embedding width `D`.
    pub hidden: usize,
    /// Pooling grid side `N_o`, in cells.
    pub grid_cells: usize,
    /// Pooling cell side, meters.
    pub cell_size: f64,
    /// Full view-frustum aperture, degrees.
    pub gamma_deg: f64,
    /// Vislet radius `r`, meters.
    pub vislet_radius: f64,
    pub t_obs: usize,
    /// Window length: observed plus predicted samples.
    pub t_pred: usize,
    pub variant: Variant,

    pub learning_rate: f64,
    pub l2: f64,
    /// Gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sampling_probability: f64,
    /// Head-angle jitter redrawn every epoch during training, degrees.
    pub augment_sigma_deg: f64,
    /// Frames between the starts of consecutive windows.
    pub window_stride: usize,

    pub rollout: RolloutMode,
    pub neighbors: NeighborSource,
    /// Head-pose noise injected into evaluation inputs, degrees.
    pub noise_sigma_deg: f64,

    pub velocity_threshold: f64,
    pub bin_half_width: f64,

    pub scenario: Scenario,
    pub episodes: usize,
    /// Pedestrians per episode; the scenario default when unset.
    pub pedestrians: Option<usize>,
    pub frames: usize,
    pub head_lead: usize,
    pub synth_head_noise_deg: f64,
    pub position_noise: f64,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub frame_period: f64,

    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hyper = Hyperparams::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            hidden: hyper.hidden,
            grid_cells: hyper.grid.cells_per_side,
            cell_size: hyper.grid.cell_size,
            gamma_deg: hyper.aperture.to_degrees(),
            vislet_radius: DEFAULT_VISLET_RADIUS,
            t_obs: hyper.t_obs,
            t_pred: hyper.t_pred,
            variant: Variant::Full,
            learning_rate: adam.learning_rate,
            l2: adam.l2,
            clip_norm: adam.clip_norm,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: 0,
            sampling_probability: 0.0,
            augment_sigma_deg: 0.0,
            window_stride: 1,
            rollout: RolloutMode::Mean,
            neighbors: NeighborSource::Predicted,
            noise_sigma_deg: 0.0,
            velocity_threshold: mxcast::eval::SLOW_SPEED,
            bin_half_width: 0.1,
            scenario: Scenario::TurnWithHeadLead,
            episodes: 10,
            pedestrians: None,
            frames: 20,
            head_lead: 3,
            synth_head_noise_deg: 0.0,
            position_noise: 0.0,
            speed_min: None,
            speed_max: None,
            frame_period: DEFAULT_FRAME_PERIOD,
            data: None,
            checkpoint: None,
            output: None,
            loss_log: None,
            report: None,
        }
    }
}

/// Every key accepted in a config file, in file order.
pub const KEYS: &[&str] = &[
    "hidden",
    "grid_cells",
    "cell_size",
    "gamma_deg",
    "vislet_radius",
    "t_obs",
    "t_pred",
    "variant",
    "learning_rate",
    "l2",
    "clip_norm",
    "epochs",
    "batch_size",
    "seed",
    "sampling_probability",
    "augment_sigma_deg",
    "window_stride",
    "rollout",
    "neighbors",
    "noise_sigma_deg",
    "velocity_threshold",
    "bin_half_width",
    "scenario",
    "episodes",
    "pedestrians",
    "frames",
    "head_lead",
    "synth_head_noise_deg",
    "position_noise",
    "speed_min",
    "speed_max",
    "frame_period",
    "data",
    "checkpoint",
    "output",
    "loss_log",
    "report",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, String>
where
    T::Err: Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn path_opt(value: &str) -> Option<PathBuf> {
    (value != "none").then(|| PathBuf::from(value))
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "hidden" => self.hidden = parse(key, v)?,
            "grid_cells" => self.grid_cells = parse(key, v)?,
            "cell_size" => self.cell_size = parse(key, v)?,
            "gamma_deg" => self.gamma_deg = parse(key, v)?,
            "vislet_radius" => self.vislet_radius = parse(key, v)?,
            "t_obs" => self.t_obs = parse(key, v)?,
            "t_pred" => self.t_pred = parse(key, v)?,
            "variant" => self.variant = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "l2" => self.l2 = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse_opt(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "sampling_probability" => self.sampling_probability = parse(key, v)?,
            "augment_sigma_deg" => self.augment_sigma_deg = parse(key, v)?,
            "window_stride" => self.window_stride = parse(key, v)?,
            "rollout" => self.rollout = parse(key, v)?,
            "neighbors" => self.neighbors = parse(key, v)?,
            "noise_sigma_deg" => self.noise_sigma_deg = parse(key, v)?,
            "velocity_threshold" => self.velocity_threshold = parse(key, v)?,
            "bin_half_width" => self.bin_half_width = parse(key, v)?,
            "scenario" => self.scenario = parse(key, v)?,
            "episodes" => self.episodes = parse(key, v)?,
            "pedestrians" => self.pedestrians = parse_opt(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "head_lead" => self.head_lead = parse(key, v)?,
            "synth_head_noise_deg" => self.synth_head_noise_deg = parse(key, v)?,
            "position_noise" => self.position_noise = parse(key, v)?,
            "speed_min" => self.speed_min = parse_opt(key, v)?,
            "speed_max" => self.speed_max = parse_opt(key, v)?,
            "frame_period" => self.frame_period = parse(key, v)?,
            "data" => self.data = path_opt(v),
            "checkpoint" => self.checkpoint = path_opt(v),
            "output" => self.output = path_opt(v),
            "loss_log" => self.loss_log = path_opt(v),
            "report" => self.report = path_opt(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Textual form of one field, as accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "hidden" => self.hidden.to_string(),
            "grid_cells" => self.grid_cells.to_string(),
            "cell_size" => self.cell_size.to_string(),
            "gamma_deg" => self.gamma_deg.to_string(),
            "vislet_radius" => self.vislet_radius.to_string(),
            "t_obs" => self.t_obs.to_string(),
            "t_pred" => self.t_pred.to_string(),
            "variant" => self.variant.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "l2" => self.l2.to_string(),
            "clip_norm" => show_opt(&self.clip_norm),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "sampling_probability" => self.sampling_probability.to_string(),
            "augment_sigma_deg" => self.augment_sigma_deg.to_string(),
            "window_stride" => self.window_stride.to_string(),
            "rollout" => self.rollout.name().to_string(),
            "neighbors" => self.neighbors.name().to_string(),
            "noise_sigma_deg" => self.noise_sigma_deg.to_string(),
            "velocity_threshold" => self.velocity_threshold.to_string(),
            "bin_half_width" => self.bin_half_width.to_string(),
            "scenario" => self.scenario.to_string(),
            "episodes" => self.episodes.to_string(),
            "pedestrians" => show_opt(&self.pedestrians),
            "frames" => self.frames.to_string(),
            "head_lead" => self.head_lead.to_string(),
            "synth_head_noise_deg" => self.synth_head_noise_deg.to_string(),
            "position_noise" => self.position_noise.to_string(),
            "speed_min" => show_opt(&self.speed_min),
            "speed_max" => show_opt(&self.speed_max),
            "frame_period" => self.frame_period.to_string(),
            "data" => show_path(&self.data),
            "checkpoint" => show_path(&self.checkpoint),
            "output" => show_path(&self.output),
            "loss_log" => show_path(&self.loss_log),
            "report" => show_path(&self.report),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| CliError::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value).map_err(parse_err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Takes the seed from `MXCAST_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", &v).map_err(|message| CliError::Config { line: 0, message: format!("{SEED_ENV}: {message}") }),
            Err(_) => Ok(()),
        }
    }

    /// Defaults, then the environment, then `file` when given.
    pub fn load(file: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        cfg.apply_env()?;
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# mxcast run configuration\n");
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            hidden: self.hidden,
            grid: GridSpec {
                cells_per_side: self.grid_cells,
                cell_size: self.cell_size,
            },
            aperture: self.gamma_deg.to_radians(),
            vislet_radius: self.vislet_radius,
            t_obs: self.t_obs,
            t_pred: self.t_pred,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                l2: self.l2,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
            seed: self.seed,
            sampling_probability: self.sampling_probability,
            head_noise_deg: self.augment_sigma_deg,
        }
    }

    pub fn forecast_options(&self) -> ForecastOptions {
        ForecastOptions {
            mode: self.rollout,
            neighbors: self.neighbors,
            seed: self.seed,
            vislet_override: None,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let base = SyntheticSpec::new(self.scenario);
        SyntheticSpec {
            episodes: self.episodes,
            pedestrians: self.pedestrians.unwrap_or(base.pedestrians),
            frames: self.frames,
            speed: (self.speed_min.unwrap_or(base.speed.0), self.speed_max.unwrap_or(base.speed.1)),
            head_lead: self.head_lead,
            head_noise_deg: self.synth_head_noise_deg,
            position_noise: self.position_noise,
            frame_period: self.frame_period,
            vislet_radius: self.vislet_radius,
            seed: self.seed,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let mut back = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hyperparams(), Hyperparams::default());
    }

    #[test]
    fn every_key_round_trips() {
        let mut cfg = RunConfig::default();
        let edits = [
            ("hidden", "32"),
            ("gamma_deg", "55.5"),
            ("variant", "bd"),
            ("clip_norm", "none"),
            ("rollout", "sampled"),
            ("neighbors", "ground_truth"),
            ("scenario", "group_conversation"),
            ("pedestrians", "5"),
            ("speed_max", "0.3"),
            ("data", "/tmp/a b.txt"),
            ("report", "out.csv"),
        ];
        for (k, v) in edits {
            cfg.set(k, v).unwrap();
        }
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for key in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut cfg = RunConfig::default();
        match cfg.apply_text("# c\nhidden = 8\nbogus = 1\n") {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(cfg.apply_text("hidden 8"), Err(CliError::Config { line: 1, .. })));
        assert!(matches!(cfg.apply_text("variant = huge"), Err(CliError::Config { .. })));
        assert_eq!(cfg.hidden, 8);
    }
}
