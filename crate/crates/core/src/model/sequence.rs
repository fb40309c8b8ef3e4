//! Windows of synchronized tracks, the per-step scene update, teacher-forced
//! forward passes and backpropagation through time.
//!
//! All pedestrians of a window advance together. At step `t` each ego pools
//! the hidden states its neighbours produced at `t - 1`, so the backward pass
//! routes the gradient of every pooled cell back into the contributing
//! neighbours' previous hidden states.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;

use super::{MxLstm, Variant};
use crate::error::{Error, Result};
use crate::gaussian::{nll_and_grad, Bivariate, LogCholParams, BIVARIATE_LEN};
use crate::nn::LstmCache;
use crate::pooling::{pool_hidden_states, Frustum, PoolingGrid};
use crate::types::{Position, Scene, Vislet};

/// One pedestrian's samples over a window, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PedWindow {
    pub ped_id: i64,
    pub positions: Vec<Position>,
    pub vislets: Option<Vec<Vislet>>,
}

impl PedWindow {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Pedestrians present on every frame of `[start, start + len·step)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start_frame: i64,
    pub frame_step: i64,
    pub peds: Vec<PedWindow>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.peds.first().map_or(0, PedWindow::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> i64 {
        self.start_frame + t as i64 * self.frame_step
    }

    /// The first `len` samples of every pedestrian.
    pub fn truncated(&self, len: usize) -> Window {
        Window {
            start_frame: self.start_frame,
            frame_step: self.frame_step,
            peds: self
                .peds
                .iter()
                .map(|p| PedWindow {
                    ped_id: p.ped_id,
                    positions: p.positions[..len.min(p.len())].to_vec(),
                    vislets: p.vislets.as_ref().map(|v| v[..len.min(v.len())].to_vec()),
                })
                .collect(),
        }
    }

    pub fn has_vislets(&self) -> bool {
        !self.peds.is_empty() && self.peds.iter().all(|p| p.vislets.is_some())
    }

    pub(crate) fn check(&self, len: usize, need_vislets: bool) -> Result<()> {
        if self.peds.is_empty() {
            return Err(Error::Validation("window has no pedestrians".into()));
        }
        for p in &self.peds {
            if p.positions.len() < len {
                return Err(Error::Validation(format!(
                    "pedestrian {} has {} samples, need {len}",
                    p.ped_id,
                    p.positions.len()
                )));
            }
            match &p.vislets {
                Some(v) if v.len() != p.positions.len() => {
                    return Err(Error::Dimension {
                        what: "window vislets",
                        expected: p.positions.len(),
                        got: v.len(),
                    })
                }
                None if need_vislets => {
                    return Err(Error::Validation(format!("pedestrian {} has no head pose", p.ped_id)));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Cuts a scene into windows of `len` frames whose start frames are `stride`
/// frames apart. A pedestrian enters a window only if it is present on all
/// of its frames; windows without pedestrians are dropped.
pub fn extract_windows(scene: &Scene, len: usize, stride: usize) -> Vec<Window> {
    let step = scene.frame_step.max(1);
    let Some(first) = scene.tracks.iter().filter_map(|t| t.first_frame()).min() else {
        return Vec::new();
    };
    if len == 0 {
        return Vec::new();
    }
    let period = stride.max(1) as i64 * step;
    let span = (len as i64 - 1) * step;
    let mut by_start: std::collections::BTreeMap<i64, Vec<PedWindow>> = Default::default();
    for track in &scene.tracks {
        let (Some(lo), Some(hi)) = (track.first_frame(), track.last_frame()) else {
            continue;
        };
        let offset = (lo - first).rem_euclid(period);
        let mut start = if offset == 0 { lo } else { lo + period - offset };
        while start + span <= hi {
            let samples: Option<Vec<_>> = (0..len).map(|k| track.sample_at(start + k as i64 * step, step)).collect();
            if let Some(samples) = samples {
                let positions = samples.iter().map(|s| s.position).collect();
                let vislets = samples.iter().map(|s| s.vislet).collect::<Option<Vec<_>>>();
                by_start.entry(start).or_default().push(PedWindow {
                    ped_id: track.ped_id,
                    positions,
                    vislets,
                });
            }
            start += period;
        }
    }
    by_start
        .into_iter()
        .map(|(start_frame, mut peds)| {
            peds.sort_by_key(|p| p.ped_id);
            Window {
                start_frame,
                frame_step: step,
                peds,
            }
        })
        .collect()
}

/// Everything one pedestrian feeds into one step.
#[derive(Clone, Debug)]
pub(crate) struct StepInput {
    /// Absolute position: grid centre and frustum apex.
    pub position: Position,
    pub vislet: Option<Vislet>,
    pub in_x: [f64; 2],
    pub in_a: [f64; 2],
}

/// Forward values of one pedestrian at one step.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    pub in_x: [f64; 2],
    pub in_a: [f64; 2],
    pub ex: Vec<f64>,
    pub ea: Vec<f64>,
    pub pooled: Option<PoolingGrid>,
    pub ep: Vec<f64>,
    pub z: Vec<f64>,
    pub lstm: LstmCache,
    pub out: Vec<f64>,
}

impl MxLstm {
    /// Advances every pedestrian by one step. `neighbour_positions[j]` is
    /// where the others see pedestrian `j`; each ego's own grid is centred
    /// on `inputs[i].position`.
    pub(crate) fn step(
        &self,
        inputs: &[StepInput],
        neighbour_positions: &[Position],
        h_prev: &[Vec<f64>],
        c_prev: &[Vec<f64>],
    ) -> Result<Vec<StepCache>> {
        let d = self.hyper.hidden;
        let p = &self.params;
        let l = &self.layout;
        let mut out = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.iter().enumerate() {
            let mut ex = vec![0.0; d];
            l.emb_position.forward(p, &input.in_x, &mut ex);
            let mut z = Vec::with_capacity(l.lstm.input);
            z.extend_from_slice(&ex);
            let mut ea = Vec::new();
            if let Some(e) = &l.emb_vislet {
                ea = vec![0.0; d];
                e.forward(p, &input.in_a, &mut ea);
                z.extend_from_slice(&ea);
            }
            let mut pooled = None;
            let mut ep = Vec::new();
            if let (Some(e), Some(mode)) = (&l.emb_pool, self.variant.pooling()) {
                let frustum = match mode {
                    crate::pooling::PoolingMode::Frustum => {
                        let v = input.vislet.ok_or_else(|| Error::Validation("frustum pooling needs a vislet".into()))?;
                        Some(Frustum::from_vislet(&v, self.hyper.aperture, self.hyper.frustum_depth())?)
                    }
                    crate::pooling::PoolingMode::NoFrustum => None,
                };
                let grid = if neighbour_positions[i] == input.position {
                    pool_hidden_states(&self.hyper.grid, d, i, neighbour_positions, h_prev, mode, frustum.as_ref())?
                } else {
                    let mut pos = neighbour_positions.to_vec();
                    pos[i] = input.position;
                    pool_hidden_states(&self.hyper.grid, d, i, &pos, h_prev, mode, frustum.as_ref())?
                };
                ep = vec![0.0; d];
                e.forward(p, &grid.cells, &mut ep);
                z.extend_from_slice(&ep);
                pooled = Some(grid);
            }
            let lstm = l.lstm.forward(p, &z, &h_prev[i], &c_prev[i]);
            let mut o = vec![0.0; l.output.out];
            l.output.forward(p, &lstm.h, &mut o);
            out.push(StepCache {
                in_x: input.in_x,
                in_a: input.in_a,
                ex,
                ea,
                pooled,
                ep,
                z,
                lstm,
                out: o,
            });
        }
        Ok(out)
    }

    /// NLL of a normalized target `[dx, dy, ax, ay]` under one output vector,
    /// and its gradient with respect to that vector.
    pub(crate) fn head_loss(&self, out: &[f64], target: &[f64; 4]) -> Result<(f64, Vec<f64>)> {
        match self.variant {
            Variant::BlockDiagonal => {
                let (a, ga) = Bivariate::from_slice(&out[..BIVARIATE_LEN])?.nll_and_grad(&[target[0], target[1]])?;
                let (b, gb) = Bivariate::from_slice(&out[BIVARIATE_LEN..])?.nll_and_grad(&[target[2], target[3]])?;
                let mut g = ga.to_vec();
                g.extend_from_slice(&gb);
                Ok((a + b, g))
            }
            Variant::Vanilla => {
                let (a, g) = Bivariate::from_slice(out)?.nll_and_grad(&[target[0], target[1]])?;
                Ok((a, g.to_vec()))
            }
            _ => {
                let (v, g) = nll_and_grad(&LogCholParams::from_slice(out)?, target)?;
                Ok((v, g.to_vec()))
            }
        }
    }

    /// Mean position offset and, when modelled, mean anchor offset, both in
    /// normalized units relative to the current position.
    pub(crate) fn mean_offsets(&self, out: &[f64]) -> ([f64; 2], Option<[f64; 2]>) {
        match self.variant {
            Variant::BlockDiagonal => ([out[0], out[1]], Some([out[BIVARIATE_LEN], out[BIVARIATE_LEN + 1]])),
            Variant::Vanilla => ([out[0], out[1]], None),
            _ => ([out[0], out[1]], Some([out[2], out[3]])),
        }
    }

    pub(crate) fn input_offsets(&self, prev: Position, pos: Position, vislet: Option<&Vislet>) -> ([f64; 2], [f64; 2]) {
        let n = self.normalization;
        let dx = pos - prev;
        let in_a = vislet.map_or([0.0, 0.0], |v| {
            let a = v.anchor - prev;
            [a.x / n.anchor, a.y / n.anchor]
        });
        ([dx.x / n.position, dx.y / n.position], in_a)
    }

    /// Teacher-forced pass over the first `hyper.t_pred` samples of a window.
    /// The loss covers the predictions of samples `t_obs..t_pred`.
    ///
    /// With `sampling = Some((p, rng))`, each input inside the loss window is
    /// replaced with probability `p` by the model's own mean prediction from
    /// the previous step, treated as a constant.
    pub fn forward_window<R: Rng + ?Sized>(&self, window: &Window, mut sampling: Option<(f64, &mut R)>) -> Result<ForwardTrace> {
        let len = self.hyper.t_pred;
        let t_obs = self.hyper.t_obs;
        window.check(len, self.variant.uses_vislets())?;
        let n_peds = window.peds.len();
        let d = self.hyper.hidden;
        let zeros = vec![vec![0.0; d]; n_peds];
        let norm = self.normalization;

        let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(len - 1);
        let mut douts: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(len - 1);
        let mut loss = 0.0;
        let mut terms = 0usize;
        for t in 0..len - 1 {
            let mut inputs = Vec::with_capacity(n_peds);
            let mut positions = Vec::with_capacity(n_peds);
            for (i, ped) in window.peds.iter().enumerate() {
                let pos = ped.positions[t];
                let prev = ped.positions[t.saturating_sub(1)];
                let vislet = ped.vislets.as_ref().map(|v| v[t]);
                let (mut in_x, mut in_a) = self.input_offsets(prev, pos, vislet.as_ref());
                if t >= t_obs {
                    if let Some((prob, rng)) = sampling.as_mut() {
                        if rng.random::<f64>() < *prob {
                            let (mx, ma) = self.mean_offsets(&steps[t - 1][i].out);
                            in_x = mx;
                            if let Some(ma) = ma {
                                in_a = ma;
                            }
                        }
                    }
                }
                positions.push(pos);
                inputs.push(StepInput {
                    position: pos,
                    vislet,
                    in_x,
                    in_a,
                });
            }
            let (h_prev, c_prev): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                steps[t - 1].iter().map(|s| (s.lstm.h.clone(), s.lstm.c.clone())).unzip()
            };
            let caches = self.step(&inputs, &positions, &h_prev, &c_prev)?;

            let mut step_douts = vec![None; n_peds];
            if t + 1 >= t_obs {
                for (i, ped) in window.peds.iter().enumerate() {
                    let p0 = ped.positions[t];
                    let dp = ped.positions[t + 1] - p0;
                    let da = ped
                        .vislets
                        .as_ref()
                        .map_or(Position::new(0.0, 0.0), |v| v[t + 1].anchor - p0);
                    let target = [
                        dp.x / norm.position,
                        dp.y / norm.position,
                        da.x / norm.anchor,
                        da.y / norm.anchor,
                    ];
                    let (v, g) = self.head_loss(&caches[i].out, &target)?;
                    loss += v;
                    terms += 1;
                    step_douts[i] = Some(g);
                }
            }
            steps.push(caches);
            douts.push(step_douts);
        }
        let relu_signature = relu_signature(&steps);
        Ok(ForwardTrace {
            steps,
            douts,
            loss,
            terms,
            relu_signature,
        })
    }

    /// Accumulates the gradient of `trace.loss` into `grad`.
    pub fn backward_window(&self, trace: &ForwardTrace, grad: &mut Gradient) {
        let d = self.hyper.hidden;
        let l = &self.layout;
        let p = &self.params;
        let g = &mut grad.values;
        let n_peds = trace.steps.first().map_or(0, Vec::len);
        let zeros = vec![0.0; d];
        let mut dh_next = vec![vec![0.0; d]; n_peds];
        let mut dc_next = vec![vec![0.0; d]; n_peds];
        for t in (0..trace.steps.len()).rev() {
            let caches = &trace.steps[t];
            let mut dh_prev = vec![vec![0.0; d]; n_peds];
            let mut dc_prev = vec![vec![0.0; d]; n_peds];
            for (i, cache) in caches.iter().enumerate() {
                let mut dh = std::mem::take(&mut dh_next[i]);
                if let Some(dout) = &trace.douts[t][i] {
                    l.output.backward(p, &cache.lstm.h, dout, g, Some(&mut dh));
                }
                let (h0, c0) = if t == 0 {
                    (&zeros, &zeros)
                } else {
                    (&trace.steps[t - 1][i].lstm.h, &trace.steps[t - 1][i].lstm.c)
                };
                let mut dz = vec![0.0; l.lstm.input];
                l.lstm.backward(
                    p,
                    &cache.lstm,
                    &cache.z,
                    h0,
                    c0,
                    &dh,
                    &dc_next[i],
                    g,
                    &mut dz,
                    &mut dh_prev[i],
                    &mut dc_prev[i],
                );
                l.emb_position.backward(p, &cache.in_x, &cache.ex, &dz[..d], g, None);
                let mut offset = d;
                if let Some(e) = &l.emb_vislet {
                    e.backward(p, &cache.in_a, &cache.ea, &dz[offset..offset + d], g, None);
                    offset += d;
                }
                if let (Some(e), Some(grid)) = (&l.emb_pool, &cache.pooled) {
                    let dv = e.backward(p, &grid.cells, &cache.ep, &dz[offset..offset + d], g);
                    for ((cell, _), (dcell, who)) in grid.cells.iter().zip(dv.iter().zip(&grid.contributors)) {
                        grad.touched.insert(*cell);
                        if t > 0 {
                            for &j in who {
                                for (a, b) in dh_prev[j].iter_mut().zip(dcell) {
                                    *a += b;
                                }
                            }
                        }
                    }
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    /// Teacher-forced loss of a window and its gradient.
    pub fn loss_and_gradient(&self, window: &Window) -> Result<(f64, usize, Gradient)> {
        let trace = self.forward_window::<rand_chacha::ChaCha8Rng>(window, None)?;
        let mut grad = Gradient::new(self);
        self.backward_window(&trace, &mut grad);
        Ok((trace.loss, trace.terms, grad))
    }
}

fn relu_signature(steps: &[Vec<StepCache>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in steps.iter().flatten() {
        for v in s.ex.iter().chain(&s.ea).chain(&s.ep) {
            h ^= (*v > 0.0) as u64 + 1;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Cached values of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub(crate) steps: Vec<Vec<StepCache>>,
    pub(crate) douts: Vec<Vec<Option<Vec<f64>>>>,
    /// Summed NLL over all predicted samples.
    pub loss: f64,
    /// Number of (pedestrian, step) terms in `loss`.
    pub terms: usize,
    /// Hash of the on/off pattern of every ReLU unit.
    pub relu_signature: u64,
}

impl ForwardTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// Output vector of pedestrian `ped` after step `t`.
    pub fn output(&self, t: usize, ped: usize) -> &[f64] {
        &self.steps[t][ped].out
    }

    pub fn hidden(&self, t: usize, ped: usize) -> &[f64] {
        &self.steps[t][ped].lstm.h
    }

    pub fn cell(&self, t: usize, ped: usize) -> &[f64] {
        &self.steps[t][ped].lstm.c
    }

    /// Occupied pooling cells of pedestrian `ped` at step `t`.
    pub fn pooled_cells(&self, t: usize, ped: usize) -> Vec<usize> {
        self.steps[t][ped]
            .pooled
            .as_ref()
            .map_or_else(Vec::new, |g| g.cells.iter().map(|(c, _)| *c).collect())
    }
}

/// Gradient buffer laid out like the parameters. Blocks of the sparse pooling
/// matrix are tracked individually so clearing and summing skip the
/// untouched ones.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub values: Vec<f64>,
    touched: BTreeSet<usize>,
    dense: Vec<Range<usize>>,
    pool: Option<crate::nn::PoolEmbedding>,
}

impl Gradient {
    pub fn new(model: &MxLstm) -> Gradient {
        let layout = &model.layout;
        let pool = layout.emb_pool;
        let skip = pool.map(|e| e.weight_range());
        let dense = layout
            .blocks
            .iter()
            .map(|b| b.range.clone())
            .filter(|r| Some(r) != skip.as_ref())
            .collect();
        Gradient {
            values: vec![0.0; layout.len],
            touched: BTreeSet::new(),
            dense,
            pool,
        }
    }

    /// Pooling-grid cells whose weight block received gradient.
    pub fn touched_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.touched.iter().copied()
    }

    fn live_ranges(&self) -> Vec<Range<usize>> {
        let mut out = self.dense.clone();
        if let Some(pool) = &self.pool {
            out.extend(self.touched.iter().map(|&c| pool.block_range(c)));
        }
        out
    }

    pub fn clear(&mut self) {
        for r in self.live_ranges() {
            self.values[r].iter_mut().for_each(|v| *v = 0.0);
        }
        self.touched.clear();
    }

    pub fn accumulate(&mut self, other: &Gradient) {
        for r in other.live_ranges() {
            for (a, b) in self.values[r.clone()].iter_mut().zip(&other.values[r]) {
                *a += b;
            }
        }
        self.touched.extend(other.touched.iter().copied());
    }

    pub fn scale(&mut self, s: f64) {
        for r in self.live_ranges() {
            self.values[r].iter_mut().for_each(|v| *v *= s);
        }
    }
}
