//! The mixed tracklet/vislet LSTM and its ablation variants.
//!
//! Per pedestrian and time step the network embeds the position offset, the
//! vislet anchor offset and the pooled social tensor, concatenates the three
//! embeddings into an LSTM step, and maps the new hidden state to the
//! parameters of the distribution of the next sample.
//!
//! Inputs and targets are expressed relative to the previous position
//! `p_{t-1}`: the position input is `(p_t - p_{t-1}) / s_pos` and the anchor
//! input is `(a_t - p_{t-1}) / s_anchor`, with the two scales fitted on the
//! training data and stored with the weights.

mod checkpoint;
mod forecast;
mod sequence;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forecast::{
    counterfactual_forecast, forecast, forecast_scene, ForecastOptions, ForecastResult, NeighborSource, PedForecast, RolloutMode,
    StepDistribution,
};
pub use sequence::{extract_windows, ForwardTrace, Gradient, PedWindow, Window};
pub use train::{TrainConfig, TrainReport, Trainer};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{BIVARIATE_LEN, PARAM_LEN};
use crate::nn::{init_uniform, Block, EmbeddingLayer, Linear, LstmCell, ParamBuilder, PoolEmbedding};
use crate::pooling::{GridSpec, PoolingMode, DEFAULT_APERTURE_DEG};
use crate::types::DEFAULT_VISLET_RADIUS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Vislets, frustum pooling and a full 4×4 covariance.
    Full,
    /// As `Full` but with two independent 2×2 covariances.
    BlockDiagonal,
    /// Isotropic grid pooling without the frustum test.
    NoFrustum,
    /// No social pooling at all.
    Individual,
    /// Positions only, bivariate position head.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::BlockDiagonal,
        Variant::NoFrustum,
        Variant::Individual,
        Variant::Vanilla,
    ];

    pub fn uses_vislets(self) -> bool {
        self != Variant::Vanilla
    }

    pub fn pooling(self) -> Option<PoolingMode> {
        match self {
            Variant::Full | Variant::BlockDiagonal => Some(PoolingMode::Frustum),
            Variant::NoFrustum => Some(PoolingMode::NoFrustum),
            Variant::Individual | Variant::Vanilla => None,
        }
    }

    pub fn output_len(self) -> usize {
        match self {
            Variant::BlockDiagonal => 2 * BIVARIATE_LEN,
            Variant::Vanilla => BIVARIATE_LEN,
            _ => PARAM_LEN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::BlockDiagonal => "bd",
            Variant::NoFrustum => "no_frustum",
            Variant::Individual => "individual",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    /// Hidden and embedding width `D`.
    pub hidden: usize,
    pub grid: GridSpec,
    /// Full frustum aperture, radians.
    pub aperture: f64,
    pub vislet_radius: f64,
    /// Observed samples per window.
    pub t_obs: usize,
    /// Total samples per window (observed plus predicted).
    pub t_pred: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: 128,
            grid: GridSpec::default(),
            aperture: DEFAULT_APERTURE_DEG.to_radians(),
            vislet_radius: DEFAULT_VISLET_RADIUS,
            t_obs: 8,
            t_pred: 20,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidInput("hidden size must be positive".into()));
        }
        if self.grid.cells_per_side == 0 || !(self.grid.cell_size > 0.0) {
            return Err(Error::InvalidInput("pooling grid must be non-empty".into()));
        }
        if !(self.aperture > 0.0 && self.aperture < std::f64::consts::PI) {
            return Err(Error::InvalidInput("frustum aperture must lie in (0°, 180°)".into()));
        }
        if !(self.vislet_radius > 0.0) {
            return Err(Error::InvalidInput("vislet radius must be positive".into()));
        }
        if self.t_obs < 1 || self.t_pred <= self.t_obs {
            return Err(Error::InvalidInput(format!(
                "need 1 <= t_obs < t_pred, got t_obs={} t_pred={}",
                self.t_obs, self.t_pred
            )));
        }
        Ok(())
    }

    /// Frustum depth: bounded by the pooling grid.
    pub fn frustum_depth(&self) -> f64 {
        self.grid.half_extent()
    }

    pub fn horizon(&self) -> usize {
        self.t_pred - self.t_obs
    }
}

/// Scales that map world offsets to network units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub position: f64,
    pub anchor: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            position: 1.0,
            anchor: 1.0,
        }
    }
}

impl Normalization {
    const FLOOR: f64 = 1e-3;

    /// Root-mean-square of the position and anchor offset components.
    pub fn fit(windows: &[Window]) -> Normalization {
        let (mut sp, mut np, mut sa, mut na) = (0.0, 0usize, 0.0, 0usize);
        for w in windows {
            for ped in &w.peds {
                for t in 1..ped.positions.len() {
                    let d = ped.positions[t] - ped.positions[t - 1];
                    sp += d.x * d.x + d.y * d.y;
                    np += 2;
                    if let Some(v) = &ped.vislets {
                        let a = v[t].anchor - ped.positions[t - 1];
                        sa += a.x * a.x + a.y * a.y;
                        na += 2;
                    }
                }
            }
        }
        let rms = |s: f64, n: usize| if n == 0 { 1.0 } else { (s / n as f64).sqrt().max(Self::FLOOR) };
        Normalization {
            position: rms(sp, np),
            anchor: rms(sa, na),
        }
    }
}

/// Where each layer lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub emb_position: EmbeddingLayer,
    pub emb_vislet: Option<EmbeddingLayer>,
    pub emb_pool: Option<PoolEmbedding>,
    pub lstm: LstmCell,
    pub output: Linear,
    pub len: usize,
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn new(variant: Variant, hyper: &Hyperparams) -> Layout {
        let d = hyper.hidden;
        let mut b = ParamBuilder::default();
        let emb_position = EmbeddingLayer::new(&mut b, "W_x", d, 2);
        let emb_vislet = variant.uses_vislets().then(|| EmbeddingLayer::new(&mut b, "W_a", d, 2));
        let emb_pool = variant
            .pooling()
            .map(|_| PoolEmbedding::new(&mut b, "W_H", d, hyper.grid.cell_count()));
        let streams = 1 + emb_vislet.is_some() as usize + emb_pool.is_some() as usize;
        let lstm = LstmCell::new(&mut b, "W_LSTM", streams * d, d);
        let output = Linear::new(&mut b, "W_o", variant.output_len(), d);
        let (len, blocks) = b.finish();
        Layout {
            emb_position,
            emb_vislet,
            emb_pool,
            lstm,
            output,
            len,
            blocks,
        }
    }

    /// Parameter ranges grouped by weight family (`W_x`, `W_a`, `W_H`,
    /// `W_LSTM`, `W_o`), each including its bias.
    pub fn families(&self) -> Vec<(&'static str, Vec<std::ops::Range<usize>>)> {
        let mut out = vec![(
            "W_x",
            vec![self.emb_position.linear.weight_range(), self.emb_position.linear.bias_range()],
        )];
        if let Some(e) = &self.emb_vislet {
            out.push(("W_a", vec![e.linear.weight_range(), e.linear.bias_range()]));
        }
        if let Some(e) = &self.emb_pool {
            out.push(("W_H", vec![e.weight_range(), e.bias_range()]));
        }
        out.push(("W_LSTM", vec![self.lstm.gates.weight_range(), self.lstm.gates.bias_range()]));
        out.push(("W_o", vec![self.output.weight_range(), self.output.bias_range()]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MxLstm {
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub normalization: Normalization,
    pub layout: Layout,
    pub params: Vec<f64>,
    /// Seed used for initialization and, by default, for training.
    pub seed: u64,
}

impl MxLstm {
    /// Randomly initialized model: every weight and bias uniform in
    /// `±1/√fan_in`.
    pub fn new(variant: Variant, hyper: Hyperparams, seed: u64) -> Result<MxLstm> {
        let mut model = Self::zeros(variant, hyper)?;
        model.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = model.layout.clone();
        let p = &mut model.params;
        init_uniform(p, &[l.emb_position.linear.weight_range(), l.emb_position.linear.bias_range()], 2, &mut rng);
        if let Some(e) = &l.emb_vislet {
            init_uniform(p, &[e.linear.weight_range(), e.linear.bias_range()], 2, &mut rng);
        }
        if let Some(e) = &l.emb_pool {
            init_uniform(p, &[e.weight_range(), e.bias_range()], e.fan_in(), &mut rng);
        }
        init_uniform(p, &[l.lstm.gates.weight_range(), l.lstm.gates.bias_range()], l.lstm.gates.fan_in(), &mut rng);
        init_uniform(p, &[l.output.weight_range(), l.output.bias_range()], l.output.fan_in(), &mut rng);
        Ok(model)
    }

    pub fn zeros(variant: Variant, hyper: Hyperparams) -> Result<MxLstm> {
        hyper.validate()?;
        let layout = Layout::new(variant, &hyper);
        let params = vec![0.0; layout.len];
        Ok(MxLstm {
            variant,
            hyper,
            normalization: Normalization::default(),
            layout,
            params,
            seed: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_shapes() {
        let hyper = Hyperparams {
            hidden: 8,
            grid: GridSpec {
                cells_per_side: 4,
                cell_size: 1.0,
            },
            ..Default::default()
        };
        let full = Layout::new(Variant::Full, &hyper);
        assert_eq!(full.lstm.input, 24);
        assert_eq!(full.output.out, 14);
        assert!(full.emb_pool.is_some() && full.emb_vislet.is_some());

        let bd = Layout::new(Variant::BlockDiagonal, &hyper);
        assert_eq!(bd.output.out, 10);

        let ind = Layout::new(Variant::Individual, &hyper);
        assert!(ind.emb_pool.is_none());
        assert_eq!(ind.lstm.input, 16);

        let van = Layout::new(Variant::Vanilla, &hyper);
        assert!(van.emb_pool.is_none() && van.emb_vislet.is_none());
        assert_eq!(van.lstm.input, 8);
        assert_eq!(van.output.out, 5);
        assert_eq!(van.families().len(), 3);
        assert_eq!(full.families().len(), 5);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("social".parse::<Variant>().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let hyper = Hyperparams {
            hidden: 6,
            grid: GridSpec {
                cells_per_side: 3,
                cell_size: 1.0,
            },
            ..Default::default()
        };
        let a = MxLstm::new(Variant::Full, hyper, 42).unwrap();
        let b = MxLstm::new(Variant::Full, hyper, 42).unwrap();
        let c = MxLstm::new(Variant::Full, hyper, 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        let l = &a.layout;
        let bound = 1.0 / (l.lstm.gates.fan_in() as f64).sqrt();
        assert!(a.params[l.lstm.gates.weight_range()].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rejects_bad_hyperparams() {
        let bad = Hyperparams {
            t_obs: 8,
            t_pred: 8,
            ..Default::default()
        };
        assert!(MxLstm::zeros(Variant::Full, bad).is_err());
    }
}
