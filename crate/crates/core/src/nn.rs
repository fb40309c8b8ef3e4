//! Hand-written layers with explicit backward passes, and the Adam optimizer.
//!
//! Layers do not own their weights. Every model keeps a single flat `Vec<f64>`
//! of parameters and each layer records the offsets of its weight matrix and
//! bias inside it. Gradients use the same layout, so optimizer updates,
//! checkpoints and finite-difference probes all work on plain slices.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// A named contiguous range of the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub range: Range<usize>,
}

/// Allocates parameter ranges in declaration order.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    len: usize,
    blocks: Vec<Block>,
}

impl ParamBuilder {
    pub fn alloc(&mut self, name: &str, size: usize) -> usize {
        let start = self.len;
        self.len += size;
        self.blocks.push(Block {
            name: name.to_string(),
            range: start..self.len,
        });
        start
    }

    pub fn finish(self) -> (usize, Vec<Block>) {
        (self.len, self.blocks)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

/// Affine map `y = W x + b` with `W` stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub out: usize,
    pub inp: usize,
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(builder: &mut ParamBuilder, name: &str, out: usize, inp: usize) -> Self {
        let w = builder.alloc(&format!("{name}.weight"), out * inp);
        let b = builder.alloc(&format!("{name}.bias"), out);
        Self { out, inp, w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.inp
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.w..self.w + self.out * self.inp
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.b..self.b + self.out
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(y.len(), self.out);
        let w = &p[self.weight_range()];
        let b = &p[self.bias_range()];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            *yo = b[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested, the
    /// input gradient into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        {
            let gw = &mut grad[self.w..self.w + self.out * self.inp];
            for (o, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x, &mut gw[o * self.inp..(o + 1) * self.inp]);
                }
            }
        }
        for (g, &d) in grad[self.bias_range()].iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            let w = &p[self.weight_range()];
            for (o, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * self.inp..(o + 1) * self.inp], dx);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Linear projection followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingLayer {
    pub linear: Linear,
}

impl EmbeddingLayer {
    pub fn new(builder: &mut ParamBuilder, name: &str, out: usize, inp: usize) -> Self {
        Self {
            linear: Linear::new(builder, name, out, inp),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        self.linear.forward(p, x, y);
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
    }

    /// `y` is the forward output; units with `y == 0` pass no gradient.
    pub fn backward(&self, p: &[f64], x: &[f64], y: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let masked: Vec<f64> = dy.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
        self.linear.backward(p, x, &masked, grad, dx);
    }
}

/// `ReLU(W·input + b)`.
pub fn embed(layer: &EmbeddingLayer, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    check_len("embedding input", layer.linear.inp, input.len())?;
    let mut out = vec![0.0; layer.linear.out];
    layer.forward(params, input, &mut out);
    Ok(out)
}

/// Embedding of the sparse social tensor. The weight matrix is
/// `hidden × (cells·hidden)`, stored as one `hidden × hidden` block per grid
/// cell so that only occupied cells are touched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolEmbedding {
    pub hidden: usize,
    pub cells: usize,
    pub w: usize,
    pub b: usize,
}

impl PoolEmbedding {
    pub fn new(builder: &mut ParamBuilder, name: &str, hidden: usize, cells: usize) -> Self {
        let w = builder.alloc(&format!("{name}.weight"), cells * hidden * hidden);
        let b = builder.alloc(&format!("{name}.bias"), hidden);
        Self { hidden, cells, w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.cells * self.hidden
    }

    pub fn block_range(&self, cell: usize) -> Range<usize> {
        let size = self.hidden * self.hidden;
        self.w + cell * size..self.w + (cell + 1) * size
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.w..self.w + self.cells * self.hidden * self.hidden
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.b..self.b + self.hidden
    }

    /// `cells` lists `(cell index, summed hidden state)` for occupied cells.
    pub fn forward(&self, p: &[f64], cells: &[(usize, Vec<f64>)], y: &mut [f64]) {
        y.copy_from_slice(&p[self.bias_range()]);
        for (cell, v) in cells {
            let block = &p[self.block_range(*cell)];
            for (k, yk) in y.iter_mut().enumerate() {
                *yk += dot(&block[k * self.hidden..(k + 1) * self.hidden], v);
            }
        }
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
    }

    /// Returns the gradient with respect to each occupied cell's pooled vector.
    pub fn backward(&self, p: &[f64], cells: &[(usize, Vec<f64>)], y: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let masked: Vec<f64> = dy.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
        for (g, &d) in grad[self.bias_range()].iter_mut().zip(&masked) {
            *g += d;
        }
        let mut out = Vec::with_capacity(cells.len());
        for (cell, v) in cells {
            let range = self.block_range(*cell);
            let mut dv = vec![0.0; self.hidden];
            {
                let gblock = &mut grad[range.clone()];
                for (k, &d) in masked.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, v, &mut gblock[k * self.hidden..(k + 1) * self.hidden]);
                    }
                }
            }
            let block = &p[range];
            for (k, &d) in masked.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &block[k * self.hidden..(k + 1) * self.hidden], &mut dv);
                }
            }
            out.push(dv);
        }
        out
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-layer LSTM with gate order input, forget, candidate, output.
/// The gate matrix acts on `[x; h_prev]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub gates: Linear,
}

/// Forward-pass values needed by [`LstmCell::backward`].
#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    /// Activated gates `[i, f, g, o]`, each `hidden` long.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new(builder: &mut ParamBuilder, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            gates: Linear::new(builder, name, 4 * hidden, input + hidden),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
        let hd = self.hidden;
        let mut xh = Vec::with_capacity(self.input + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);
        let mut gates = vec![0.0; 4 * hd];
        self.gates.forward(p, &xh, &mut gates);
        for k in 0..hd {
            gates[k] = sigmoid(gates[k]);
            gates[hd + k] = sigmoid(gates[hd + k]);
            gates[2 * hd + k] = gates[2 * hd + k].tanh();
            gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[3 * hd + k] * tanh_c[k];
        }
        LstmCache { gates, c, tanh_c, h }
    }

    /// Backward through one step. Accumulates into `grad`, `dx`, `dh_prev`
    /// and `dc_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[f64],
        cache: &LstmCache,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        dh: &[f64],
        dc: &[f64],
        grad: &mut [f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: &mut [f64],
    ) {
        let hd = self.hidden;
        let g = &cache.gates;
        let mut dpre = vec![0.0; 4 * hd];
        for k in 0..hd {
            let (gi, gf, gg, go) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let d_o = dh[k] * cache.tanh_c[k];
            let dck = dc[k] + dh[k] * go * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            dpre[k] = dck * gg * gi * (1.0 - gi);
            dpre[hd + k] = dck * c_prev[k] * gf * (1.0 - gf);
            dpre[2 * hd + k] = dck * gi * (1.0 - gg * gg);
            dpre[3 * hd + k] = d_o * go * (1.0 - go);
            dc_prev[k] += dck * gf;
        }
        let mut xh = Vec::with_capacity(self.input + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);
        let mut dxh = vec![0.0; self.input + hd];
        self.gates.backward(p, &xh, &dpre, grad, Some(&mut dxh));
        for (a, b) in dx.iter_mut().zip(&dxh[..self.input]) {
            *a += b;
        }
        for (a, b) in dh_prev.iter_mut().zip(&dxh[self.input..]) {
            *a += b;
        }
    }
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_step(cell: &LstmCell, params: &[f64], h_prev: &[f64], c_prev: &[f64], input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("lstm input", cell.input, input.len())?;
    check_len("lstm hidden state", cell.hidden, h_prev.len())?;
    check_len("lstm cell state", cell.hidden, c_prev.len())?;
    let cache = cell.forward(params, input, h_prev, c_prev);
    Ok((cache.h, cache.c))
}

/// Uniform initialization in `±1/√fan_in` for a weight and its bias.
pub fn init_uniform<R: Rng + ?Sized>(params: &mut [f64], ranges: &[Range<usize>], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for r in ranges {
        for v in &mut params[r.clone()] {
            *v = rng.random_range(-bound..bound);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight-decay coefficient.
    pub l2: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 5e-4,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    /// Adam step with decoupled weight decay. `gradients` may be rescaled in
    /// place by the norm clip.
    pub fn step(&mut self, params: &mut [f64], gradients: &mut [f64]) -> Result<()> {
        check_len("optimizer parameters", self.first_moment.len(), params.len())?;
        check_len("optimizer gradients", self.first_moment.len(), gradients.len())?;
        if let Some((idx, v)) = gradients.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Divergence {
                at: format!("optimizer step {}", self.step + 1),
                detail: format!("gradient entry {idx} is {v}"),
            });
        }
        let cfg = self.config;
        if let Some(max_norm) = cfg.clip_norm {
            let norm = gradients.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                gradients.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(gradients.iter())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
            *p -= lr * (update + cfg.l2 * *p);
        }
        Ok(())
    }
}

/// Convenience wrapper over [`OptimizerState::step`].
pub fn optimizer_step(state: &mut OptimizerState, params: &mut [f64], gradients: &[f64]) -> Result<()> {
    let mut g = gradients.to_vec();
    state.step(params, &mut g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    fn random_params(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-0.8..0.8)).collect()
    }

    #[test]
    fn embed_zero_weights() {
        let mut b = ParamBuilder::default();
        let layer = EmbeddingLayer::new(&mut b, "e", 4, 2);
        let (len, _) = b.finish();
        let p = vec![0.0; len];
        assert_eq!(embed(&layer, &p, &[3.0, -1.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn embed_identity_copies_positive_input() {
        let mut b = ParamBuilder::default();
        let layer = EmbeddingLayer::new(&mut b, "e", 4, 2);
        let (len, _) = b.finish();
        let mut p = vec![0.0; len];
        p[layer.linear.w] = 1.0; // W[0][0]
        p[layer.linear.w + 2 + 1] = 1.0; // W[1][1]
        assert_eq!(embed(&layer, &p, &[0.7, 1.5]).unwrap(), vec![0.7, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn embed_shape_mismatch() {
        let mut b = ParamBuilder::default();
        let layer = EmbeddingLayer::new(&mut b, "e", 4, 2);
        let (len, _) = b.finish();
        assert!(matches!(
            embed(&layer, &vec![0.0; len], &[1.0, 2.0, 3.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn embed_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = ParamBuilder::default();
        let layer = EmbeddingLayer::new(&mut b, "e", 6, 3);
        let (len, _) = b.finish();
        let h = 1e-6;
        for _ in 0..50 {
            let p = random_params(len, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = embed(&layer, &p, &x).unwrap();
            let proj: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &[f64], x: &[f64]| dot(&embed(&layer, p, x).unwrap(), &proj);
            let mut grad = vec![0.0; len];
            let mut dx = vec![0.0; 3];
            layer.backward(&p, &x, &y, &proj, &mut grad, Some(&mut dx));
            for k in 0..len {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[k] += h;
                pm[k] -= h;
                let num = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
                assert!(rel_err(grad[k], num) < 1e-4, "param {k}: {} vs {num}", grad[k]);
            }
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let num = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
                assert!(rel_err(dx[i], num) < 1e-4);
            }
        }
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let mut b = ParamBuilder::default();
        let cell = LstmCell::new(&mut b, "lstm", 3, 5);
        let (len, _) = b.finish();
        let p = vec![0.0; len];
        let (h, c) = lstm_step(&cell, &p, &[0.3; 5], &[0.0; 5], &[1.0, -2.0, 4.0]).unwrap();
        assert_eq!(h, vec![0.0; 5]);
        assert_eq!(c, vec![0.0; 5]);
    }

    #[test]
    fn lstm_hidden_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut b = ParamBuilder::default();
        let cell = LstmCell::new(&mut b, "lstm", 3, 5);
        let (len, _) = b.finish();
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-20.0..20.0)).collect();
        let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
            (h, c) = lstm_step(&cell, &p, &h, &c, &x).unwrap();
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
        assert!(matches!(
            lstm_step(&cell, &p, &h, &c, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut b = ParamBuilder::default();
        let cell = LstmCell::new(&mut b, "lstm", 4, 6);
        let (len, _) = b.finish();
        let h = 1e-6;
        for _ in 0..10 {
            let p = random_params(len, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h0: Vec<f64> = (0..6).map(|_| rng.random_range(-0.9..0.9)).collect();
            let c0: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let wh: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wc: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &[f64], x: &[f64], h0: &[f64], c0: &[f64]| {
                let cache = cell.forward(p, x, h0, c0);
                dot(&cache.h, &wh) + dot(&cache.c, &wc)
            };
            let cache = cell.forward(&p, &x, &h0, &c0);
            let mut grad = vec![0.0; len];
            let (mut dx, mut dh0, mut dc0) = (vec![0.0; 4], vec![0.0; 6], vec![0.0; 6]);
            cell.backward(&p, &cache, &x, &h0, &c0, &wh, &wc, &mut grad, &mut dx, &mut dh0, &mut dc0);
            for k in 0..len {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[k] += h;
                pm[k] -= h;
                let num = (loss(&pp, &x, &h0, &c0) - loss(&pm, &x, &h0, &c0)) / (2.0 * h);
                assert!(rel_err(grad[k], num) < 1e-4, "param {k}");
            }
            for i in 0..6 {
                let mut a = h0.clone();
                let mut bm = h0.clone();
                a[i] += h;
                bm[i] -= h;
                let num = (loss(&p, &x, &a, &c0) - loss(&p, &x, &bm, &c0)) / (2.0 * h);
                assert!(rel_err(dh0[i], num) < 1e-4);
                let mut a = c0.clone();
                let mut bm = c0.clone();
                a[i] += h;
                bm[i] -= h;
                let num = (loss(&p, &x, &h0, &a) - loss(&p, &x, &h0, &bm)) / (2.0 * h);
                assert!(rel_err(dc0[i], num) < 1e-4);
            }
            for i in 0..4 {
                let mut a = x.clone();
                let mut bm = x.clone();
                a[i] += h;
                bm[i] -= h;
                let num = (loss(&p, &a, &h0, &c0) - loss(&p, &bm, &h0, &c0)) / (2.0 * h);
                assert!(rel_err(dx[i], num) < 1e-4);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_identity() {
        let cfg = AdamConfig {
            l2: 0.0,
            ..Default::default()
        };
        let mut state = OptimizerState::new(cfg, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            optimizer_step(&mut state, &mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut state = OptimizerState::new(AdamConfig::default(), 2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            optimizer_step(&mut state, &mut p, &[0.5, -2.0]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // f(p) = Σ a_k (p_k - c_k)², minimum at c.
        let a = [1.0, 4.0, 0.25];
        let c = [2.0, -1.0, 0.5];
        let cfg = AdamConfig {
            learning_rate: 0.05,
            l2: 0.0,
            clip_norm: None,
            ..Default::default()
        };
        let mut state = OptimizerState::new(cfg, 3);
        let mut p = vec![0.0; 3];
        let mut converged_at = None;
        for step in 0..5000 {
            let g: Vec<f64> = (0..3).map(|k| 2.0 * a[k] * (p[k] - c[k])).collect();
            optimizer_step(&mut state, &mut p, &g).unwrap();
            if (0..3).all(|k| (p[k] - c[k]).abs() < 1e-6) {
                converged_at = Some(step);
                break;
            }
        }
        assert!(converged_at.is_some(), "final {p:?}");
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut state = OptimizerState::new(AdamConfig::default(), 2);
        let mut p = vec![0.0, 0.0];
        let err = optimizer_step(&mut state, &mut p, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn pool_embedding_matches_dense_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = ParamBuilder::default();
        let pool = PoolEmbedding::new(&mut b, "pool", 3, 4);
        let (len, _) = b.finish();
        let p = random_params(len, &mut rng);
        let cells = vec![(1usize, vec![0.2, -0.4, 0.9]), (3usize, vec![0.5, 0.1, -0.3])];
        let mut y = vec![0.0; 3];
        pool.forward(&p, &cells, &mut y);
        // dense vec(H) with cell-major layout
        let mut dense = [0.0; 12];
        for (c, v) in &cells {
            dense[c * 3..c * 3 + 3].copy_from_slice(v);
        }
        for k in 0..3 {
            let mut acc = p[pool.b + k];
            for c in 0..4 {
                for d in 0..3 {
                    acc += p[pool.w + c * 9 + k * 3 + d] * dense[c * 3 + d];
                }
            }
            assert!((y[k] - acc.max(0.0)).abs() < 1e-12);
        }
    }
}
