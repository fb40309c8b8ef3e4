//! Mini-batch training with Adam.
//!
//! Per-window gradients are computed independently (in parallel when the
//! rayon pool has more than one thread) and summed in window order, so a run
//! is bitwise reproducible for any thread count. Each epoch shuffles with a
//! generator seeded from `(seed, epoch)`, which makes an interrupted and
//! resumed run identical to an uninterrupted one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::sequence::{Gradient, Window};
use super::{MxLstm, Normalization};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, OptimizerState};
use crate::types::{angle_from_vislet, vislet_from_angle, HeadAngle};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total number of epochs; a resumed trainer runs only the remainder.
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Probability of feeding the model's own mean prediction instead of the
    /// ground truth inside the loss window. Zero is plain teacher forcing.
    pub sampling_probability: f64,
    /// Standard deviation (degrees) of head-angle jitter redrawn for every
    /// window and epoch. Zero trains on the head poses as given.
    pub head_noise_deg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            sampling_probability: 0.0,
            head_noise_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean NLL per predicted sample for every epoch run so far.
    pub loss_curve: Vec<f64>,
    pub optimizer_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: MxLstm,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
    pub loss_curve: Vec<f64>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn jitter_heads(window: &Window, sigma_deg: f64, radius: f64, rng: &mut ChaCha8Rng) -> Result<Window> {
    let normal = Normal::new(0.0, sigma_deg.to_radians()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = window.clone();
    for ped in &mut out.peds {
        if let Some(vislets) = &mut ped.vislets {
            for v in vislets.iter_mut() {
                let alpha = angle_from_vislet(v)?.radians() + normal.sample(rng);
                *v = vislet_from_angle(v.origin, HeadAngle::new(alpha), radius)?;
            }
        }
    }
    Ok(out)
}

/// Numerical blow-ups become divergence errors tagged with their position;
/// other errors pass through.
fn as_divergence(e: Error, epoch: usize, batch: usize) -> Error {
    let at = format!("epoch {epoch}, batch {batch}");
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { at, detail },
        Error::ParameterOverflow { .. } => Error::Divergence { at, detail: e.to_string() },
        other => other,
    }
}

impl Trainer {
    pub fn new(model: MxLstm, adam: AdamConfig) -> Trainer {
        let optimizer = OptimizerState::new(adam, model.param_count());
        Trainer {
            model,
            optimizer,
            epochs_done: 0,
            loss_curve: Vec::new(),
        }
    }

    /// Fits the input scales on `windows`. Has no effect once training has
    /// started, so resumed runs keep the stored scales.
    pub fn fit_normalization(&mut self, windows: &[Window]) {
        if self.epochs_done == 0 && self.optimizer.step == 0 {
            self.model.normalization = Normalization::fit(windows);
        }
    }

    fn window_gradient(&self, window: &Window, cfg: &TrainConfig, index: usize) -> Result<(f64, usize, Gradient)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, self.epochs_done as u64, index as u64 + 1));
        let jittered;
        let window = if cfg.head_noise_deg > 0.0 {
            jittered = jitter_heads(window, cfg.head_noise_deg, self.model.hyper.vislet_radius, &mut rng)?;
            &jittered
        } else {
            window
        };
        let p = cfg.sampling_probability;
        let sampling = (p > 0.0).then_some((p, &mut rng));
        let trace = self.model.forward_window(window, sampling)?;
        let mut grad = Gradient::new(&self.model);
        self.model.backward_window(&trace, &mut grad);
        Ok((trace.loss, trace.terms, grad))
    }

    /// Runs one epoch and returns its mean per-sample NLL.
    pub fn train_epoch(&mut self, windows: &[Window], cfg: &TrainConfig) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Validation("no training windows".into()));
        }
        let epoch = self.epochs_done;
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0)));

        let mut total = Gradient::new(&self.model);
        let (mut epoch_loss, mut epoch_terms) = (0.0, 0usize);
        let parallel = rayon::current_num_threads() > 1;
        for (b, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            total.clear();
            let (mut loss, mut terms) = (0.0, 0usize);
            if parallel {
                let parts: Vec<Result<(f64, usize, Gradient)>> = batch
                    .par_iter()
                    .map(|&w| self.window_gradient(&windows[w], cfg, w))
                    .collect();
                for part in parts {
                    let (l, n, g) = part.map_err(|e| as_divergence(e, epoch, b))?;
                    loss += l;
                    terms += n;
                    total.accumulate(&g);
                }
            } else {
                for &w in batch {
                    let (l, n, g) = self.window_gradient(&windows[w], cfg, w).map_err(|e| as_divergence(e, epoch, b))?;
                    loss += l;
                    terms += n;
                    total.accumulate(&g);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    at: format!("epoch {epoch}, batch {b}"),
                    detail: format!("loss is {loss}"),
                });
            }
            if terms == 0 {
                continue;
            }
            total.scale(1.0 / terms as f64);
            self.optimizer
                .step(&mut self.model.params, &mut total.values)
                .map_err(|e| as_divergence(e, epoch, b))?;
            epoch_loss += loss;
            epoch_terms += terms;
        }
        let mean = epoch_loss / epoch_terms.max(1) as f64;
        self.epochs_done += 1;
        self.loss_curve.push(mean);
        Ok(mean)
    }

    /// Trains until `cfg.epochs` epochs are done. On divergence the weights
    /// and optimizer state are rolled back to the end of the last complete
    /// epoch before the error is returned.
    pub fn train(&mut self, windows: &[Window], cfg: &TrainConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<TrainReport> {
        self.optimizer.config = cfg.adam;
        while self.epochs_done < cfg.epochs {
            let snapshot = (self.model.params.clone(), self.optimizer.clone());
            match self.train_epoch(windows, cfg) {
                Ok(loss) => on_epoch(self.epochs_done - 1, loss),
                Err(e) => {
                    self.model.params = snapshot.0;
                    self.optimizer = snapshot.1;
                    log::error!("{e}; restored the state after {} complete epochs", self.epochs_done);
                    return Err(e);
                }
            }
        }
        Ok(TrainReport {
            loss_curve: self.loss_curve.clone(),
            optimizer_steps: self.optimizer.step,
        })
    }
}
