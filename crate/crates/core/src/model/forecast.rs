//! Autoregressive rollout.
//!
//! The observed samples are fed as ground truth; afterwards each step's
//! output (its mean, or a draw from it) becomes the next input. Predicted
//! anchors are projected back to the vislet radius before being re-embedded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sequence::{StepInput, Window};
use super::{MxLstm, Variant};
use crate::error::{Error, Result};
use crate::gaussian::{extract, reconstruct, Bivariate, Gaussian4, LogCholParams, BIVARIATE_LEN};
use crate::types::{angle_from_vislet, vislet_from_angle, HeadAngle, Position, Scene, Vislet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RolloutMode {
    /// Feed the predicted mean.
    #[default]
    Mean,
    /// Feed a draw from the predicted distribution.
    Sampled,
}

impl RolloutMode {
    pub fn name(self) -> &'static str {
        match self {
            RolloutMode::Mean => "mean",
            RolloutMode::Sampled => "sampled",
        }
    }
}

impl std::str::FromStr for RolloutMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(RolloutMode::Mean),
            "sampled" => Ok(RolloutMode::Sampled),
            _ => Err(Error::InvalidInput(format!("unknown rollout mode `{s}`"))),
        }
    }
}

/// Which positions and states the social pooling sees for the neighbours
/// during the predicted part of a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NeighborSource {
    /// The neighbours' own predictions (self-contained forecasting).
    #[default]
    Predicted,
    /// The neighbours' ground-truth positions; requires full windows.
    GroundTruth,
}

impl NeighborSource {
    pub fn name(self) -> &'static str {
        match self {
            NeighborSource::Predicted => "predicted",
            NeighborSource::GroundTruth => "ground_truth",
        }
    }
}

impl std::str::FromStr for NeighborSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(NeighborSource::Predicted),
            "ground_truth" => Ok(NeighborSource::GroundTruth),
            _ => Err(Error::InvalidInput(format!("unknown neighbour source `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ForecastOptions {
    pub mode: RolloutMode,
    pub neighbors: NeighborSource,
    /// Seed for [`RolloutMode::Sampled`].
    pub seed: u64,
    /// Replaces every observed head angle.
    pub vislet_override: Option<HeadAngle>,
}

/// Predicted distribution of one sample, in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepDistribution {
    /// Joint Gaussian over `(x, y, a_x, a_y)`.
    Full(LogCholParams),
    /// Independent position and anchor Gaussians.
    BlockDiagonal { position: Bivariate, anchor: Bivariate },
    /// Position only.
    Position(Bivariate),
}

impl StepDistribution {
    pub fn mean_position(&self) -> Position {
        match self {
            StepDistribution::Full(p) => Position::new(p.mu[0], p.mu[1]),
            StepDistribution::BlockDiagonal { position, .. } | StepDistribution::Position(position) => {
                Position::new(position.mu[0], position.mu[1])
            }
        }
    }

    pub fn mean_anchor(&self) -> Option<Position> {
        match self {
            StepDistribution::Full(p) => Some(Position::new(p.mu[2], p.mu[3])),
            StepDistribution::BlockDiagonal { anchor, .. } => Some(Position::new(anchor.mu[0], anchor.mu[1])),
            StepDistribution::Position(_) => None,
        }
    }

    /// The 4-variate Gaussian, block-diagonal for the BD head. `None` for a
    /// position-only head.
    pub fn gaussian(&self) -> Result<Option<Gaussian4>> {
        match self {
            StepDistribution::Full(p) => reconstruct(p).map(Some),
            StepDistribution::BlockDiagonal { position, anchor } => {
                let (a, b) = (position.sigma()?, anchor.sigma()?);
                let mut sigma = [[0.0; 4]; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        sigma[i][j] = a[i][j];
                        sigma[i + 2][j + 2] = b[i][j];
                    }
                }
                Ok(Some(Gaussian4 {
                    mu: [position.mu[0], position.mu[1], anchor.mu[0], anchor.mu[1]],
                    sigma,
                }))
            }
            StepDistribution::Position(_) => Ok(None),
        }
    }

    /// The 14 log-Cholesky parameters `[μ, θ]` of [`Self::gaussian`].
    pub fn log_cholesky(&self) -> Result<Option<LogCholParams>> {
        match self {
            StepDistribution::Full(p) => Ok(Some(*p)),
            _ => match self.gaussian()? {
                Some(g) => extract(&g).map(Some),
                None => Ok(None),
            },
        }
    }

    /// Whether every covariance of this step is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        match self {
            StepDistribution::Position(b) => b.sigma().is_ok_and(|s| s[0][0] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[1][0] > 0.0),
            _ => matches!(self.gaussian(), Ok(Some(g)) if g.is_positive_definite()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PedForecast {
    pub ped_id: i64,
    /// Frames of the predicted samples.
    pub frames: Vec<i64>,
    pub positions: Vec<Position>,
    pub vislets: Option<Vec<Vislet>>,
    pub distributions: Vec<StepDistribution>,
}

impl PedForecast {
    pub fn head_angles(&self) -> Option<Vec<HeadAngle>> {
        self.vislets
            .as_ref()
            .map(|v| v.iter().map(|v| angle_from_vislet(v).unwrap_or(HeadAngle::new(0.0))).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub mode: RolloutMode,
    pub peds: Vec<PedForecast>,
}

impl ForecastResult {
    pub fn ped(&self, ped_id: i64) -> Option<&PedForecast> {
        self.peds.iter().find(|p| p.ped_id == ped_id)
    }
}

/// Rolls a window forward from its first `t_obs` samples.
pub fn forecast(model: &MxLstm, window: &Window, opts: &ForecastOptions) -> Result<ForecastResult> {
    let h = model.hyper;
    let (t_obs, t_pred) = (h.t_obs, h.t_pred);
    let need = match opts.neighbors {
        NeighborSource::Predicted => t_obs,
        NeighborSource::GroundTruth => t_pred,
    };
    let uses_vislets = model.variant.uses_vislets();
    window.check(need, uses_vislets && opts.vislet_override.is_none())?;
    let n = window.peds.len();
    let norm = model.normalization;
    let r = h.vislet_radius;

    let mut pos: Vec<Vec<Position>> = window.peds.iter().map(|p| p.positions[..t_obs].to_vec()).collect();
    let mut vis: Vec<Vec<Option<Vislet>>> = Vec::with_capacity(n);
    for p in &window.peds {
        let v: Vec<Option<Vislet>> = match (uses_vislets, opts.vislet_override) {
            (false, _) => vec![None; t_obs],
            (true, Some(angle)) => p.positions[..t_obs]
                .iter()
                .map(|&x| vislet_from_angle(x, angle, r).map(Some))
                .collect::<Result<_>>()?,
            (true, None) => p.vislets.as_ref().map_or(vec![None; t_obs], |v| v[..t_obs].iter().copied().map(Some).collect()),
        };
        vis.push(v);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = h.hidden;
    let mut hs = vec![vec![0.0; d]; n];
    let mut cs = vec![vec![0.0; d]; n];
    let mut dists: Vec<Vec<StepDistribution>> = vec![Vec::new(); n];
    for t in 0..t_pred - 1 {
        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let prev = pos[i][t.saturating_sub(1)];
            let (in_x, in_a) = model.input_offsets(prev, pos[i][t], vis[i][t].as_ref());
            inputs.push(StepInput {
                position: pos[i][t],
                vislet: vis[i][t],
                in_x,
                in_a,
            });
        }
        let neighbours: Vec<Position> = match opts.neighbors {
            NeighborSource::Predicted => pos.iter().map(|p| p[t]).collect(),
            NeighborSource::GroundTruth => window.peds.iter().map(|p| p.positions[t]).collect(),
        };
        let caches = model.step(&inputs, &neighbours, &hs, &cs)?;
        for (i, c) in caches.iter().enumerate() {
            hs[i].clone_from(&c.lstm.h);
            cs[i].clone_from(&c.lstm.c);
        }
        if t + 1 < t_obs {
            continue;
        }
        for i in 0..n {
            let origin = pos[i][t];
            let out = &caches[i].out;
            let (sp, sa) = (norm.position, norm.anchor);
            let dist = match model.variant {
                Variant::BlockDiagonal => StepDistribution::BlockDiagonal {
                    position: Bivariate::from_slice(&out[..BIVARIATE_LEN])?.affine(sp, [origin.x, origin.y]),
                    anchor: Bivariate::from_slice(&out[BIVARIATE_LEN..])?.affine(sa, [origin.x, origin.y]),
                },
                Variant::Vanilla => StepDistribution::Position(Bivariate::from_slice(out)?.affine(sp, [origin.x, origin.y])),
                _ => StepDistribution::Full(
                    LogCholParams::from_slice(out)?.affine([sp, sp, sa, sa], [origin.x, origin.y, origin.x, origin.y]),
                ),
            };
            if !dist.is_positive_definite() {
                return Err(Error::Validation(format!(
                    "non-positive-definite covariance for pedestrian {} at step {}",
                    window.peds[i].ped_id,
                    t + 1
                )));
            }
            let (next, anchor) = match (opts.mode, &dist) {
                (RolloutMode::Mean, _) => (dist.mean_position(), dist.mean_anchor()),
                (RolloutMode::Sampled, StepDistribution::Full(p)) => {
                    let s = p.sample(&mut rng)?;
                    (Position::new(s[0], s[1]), Some(Position::new(s[2], s[3])))
                }
                (RolloutMode::Sampled, StepDistribution::BlockDiagonal { position, anchor }) => {
                    let a = position.sample(&mut rng)?;
                    let b = anchor.sample(&mut rng)?;
                    (Position::new(a[0], a[1]), Some(Position::new(b[0], b[1])))
                }
                (RolloutMode::Sampled, StepDistribution::Position(b)) => {
                    let a = b.sample(&mut rng)?;
                    (Position::new(a[0], a[1]), None)
                }
            };
            if !next.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite prediction for pedestrian {}",
                    window.peds[i].ped_id
                )));
            }
            let vislet = match anchor {
                Some(a) => {
                    let raw = Vislet { anchor: a, origin: next };
                    // An anchor exactly on the position keeps the last direction.
                    Some(raw.renormalized(r).or_else(|_| {
                        vis[i][t]
                            .map(|v| v.moved_to(next))
                            .ok_or(Error::DegenerateVislet)
                    })?)
                }
                None => None,
            };
            if t + 1 >= pos[i].len() {
                pos[i].push(next);
                vis[i].push(vislet);
            }
            dists[i].push(dist);
        }
    }

    let frames: Vec<i64> = (t_obs..t_pred).map(|t| window.frame(t)).collect();
    let peds = window
        .peds
        .iter()
        .enumerate()
        .map(|(i, p)| PedForecast {
            ped_id: p.ped_id,
            frames: frames.clone(),
            positions: pos[i][t_obs..].to_vec(),
            vislets: uses_vislets.then(|| vis[i][t_obs..].iter().map(|v| v.expect("vislet present")).collect()),
            distributions: std::mem::take(&mut dists[i]),
        })
        .collect();
    Ok(ForecastResult { mode: opts.mode, peds })
}

/// [`forecast`] with every observed head angle replaced by `angle`.
pub fn counterfactual_forecast(model: &MxLstm, window: &Window, angle: HeadAngle, opts: &ForecastOptions) -> Result<ForecastResult> {
    let opts = ForecastOptions {
        vislet_override: Some(angle),
        ..*opts
    };
    forecast(model, window, &opts)
}

/// Forecasts every pedestrian of `scene` observed on all of the `t_obs`
/// frames starting at `start_frame`. Pedestrians with missing observation
/// frames are skipped with a warning.
pub fn forecast_scene(model: &MxLstm, scene: &Scene, start_frame: i64, opts: &ForecastOptions) -> Result<ForecastResult> {
    let h = model.hyper;
    let need = match opts.neighbors {
        NeighborSource::Predicted => h.t_obs,
        NeighborSource::GroundTruth => h.t_pred,
    };
    let step = scene.frame_step.max(1);
    let mut peds = Vec::new();
    for track in &scene.tracks {
        if track.first_frame().is_none_or(|f| f > start_frame) || track.last_frame().is_none_or(|f| f < start_frame) {
            continue;
        }
        let samples: Option<Vec<_>> = (0..need).map(|k| track.sample_at(start_frame + k as i64 * step, step)).collect();
        match samples {
            Some(s) => peds.push(super::PedWindow {
                ped_id: track.ped_id,
                positions: s.iter().map(|s| s.position).collect(),
                vislets: s.iter().map(|s| s.vislet).collect(),
            }),
            None => log::warn!(
                "pedestrian {} lacks observation frames from {start_frame}; skipped",
                track.ped_id
            ),
        }
    }
    if peds.is_empty() {
        return Err(Error::Validation(format!("no pedestrian fully observed from frame {start_frame}")));
    }
    peds.sort_by_key(|p| p.ped_id);
    let window = Window {
        start_frame,
        frame_step: step,
        peds,
    };
    forecast(model, &window, opts)
}
