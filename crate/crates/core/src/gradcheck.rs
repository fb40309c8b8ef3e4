//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite probes at least `probes` randomly chosen parameters per block
//! and records the worst relative error
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! A probe whose `±h` perturbation flips any ReLU unit is skipped, since the
//! loss is not differentiable across that kink.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_synthetic, Scenario, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gaussian::{nll_and_grad, Bivariate, LogCholParams, PARAM_LEN};
use crate::model::{extract_windows, Gradient, Hyperparams, MxLstm, Normalization, Variant, Window};
use crate::nn::{EmbeddingLayer, LstmCell, ParamBuilder};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Minimum probes per block.
    pub probes: usize,
    pub step: f64,
    /// Relative-error denominator floor.
    pub floor: f64,
    /// Tolerance for the loss head and single-layer suites.
    pub tolerance_local: f64,
    /// Tolerance for backpropagation through a full window.
    pub tolerance_bptt: f64,
    /// Hidden width of the models under test.
    pub hidden: usize,
    /// Perturbs the analytic output-layer gradient; the run must then fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            probes: 50,
            step: 1e-5,
            floor: 1e-6,
            tolerance_local: 1e-4,
            tolerance_bptt: 1e-3,
            hidden: 8,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockResult {
    pub suite: String,
    pub block: String,
    pub probes: usize,
    pub skipped: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl BlockResult {
    pub fn passed(&self) -> bool {
        self.probes > 0 && self.worst <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(BlockResult::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("suite\tblock\tprobes\tskipped\tworst_rel_error\ttolerance\tstatus\n");
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.3e}\t{:.0e}\t{}",
                b.suite,
                b.block,
                b.probes,
                b.skipped,
                b.worst,
                b.tolerance,
                if b.passed() { "ok" } else { "FAIL" }
            );
        }
        s
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

struct Tally {
    result: BlockResult,
    floor: f64,
}

impl Tally {
    fn new(suite: &str, block: &str, tolerance: f64, floor: f64) -> Self {
        Self {
            result: BlockResult {
                suite: suite.into(),
                block: block.into(),
                probes: 0,
                skipped: 0,
                worst: 0.0,
                tolerance,
            },
            floor,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric, self.floor);
        self.result.probes += 1;
        self.result.worst = if e.is_nan() { f64::INFINITY } else { self.result.worst.max(e) };
    }
}

fn nll_suite(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng, out: &mut Vec<BlockResult>) -> Result<()> {
    let mut mu = Tally::new("nll", "mu", cfg.tolerance_local, cfg.floor);
    let mut theta = Tally::new("nll", "theta", cfg.tolerance_local, cfg.floor);
    let h = cfg.step;
    while mu.result.probes < cfg.probes || theta.result.probes < cfg.probes {
        let raw: Vec<f64> = (0..PARAM_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = LogCholParams::from_slice(&raw)?;
        let target: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let (_, g) = nll_and_grad(&p, &target)?;
        let k = rng.random_range(0..PARAM_LEN);
        let eval = |delta: f64| -> Result<f64> {
            let mut q = raw.clone();
            q[k] += delta;
            Ok(nll_and_grad(&LogCholParams::from_slice(&q)?, &target)?.0)
        };
        let num = (eval(h)? - eval(-h)?) / (2.0 * h);
        if k < 4 { &mut mu } else { &mut theta }.record(g[k], num);
    }
    out.push(mu.result);
    out.push(theta.result);

    let mut biv = Tally::new("nll", "bivariate", cfg.tolerance_local, cfg.floor);
    while biv.result.probes < cfg.probes {
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (_, g) = Bivariate::from_slice(&raw)?.nll_and_grad(&target)?;
        let k = rng.random_range(0..5);
        let eval = |delta: f64| -> Result<f64> {
            let mut q = raw.clone();
            q[k] += delta;
            Bivariate::from_slice(&q)?.nll(&target)
        };
        let num = (eval(h)? - eval(-h)?) / (2.0 * h);
        biv.record(g[k], num);
    }
    out.push(biv.result);
    Ok(())
}

fn layer_suites(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng, out: &mut Vec<BlockResult>) {
    let h = cfg.step;
    let d = cfg.hidden;

    let mut b = ParamBuilder::default();
    let emb = EmbeddingLayer::new(&mut b, "W_x", d, 2);
    let (len, _) = b.finish();
    let mut t = Tally::new("embedding", "W_x", cfg.tolerance_local, cfg.floor);
    while t.result.probes < cfg.probes {
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let proj: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |p: &[f64]| -> (f64, Vec<bool>) {
            let mut y = vec![0.0; d];
            emb.forward(p, &x, &mut y);
            (y.iter().zip(&proj).map(|(a, b)| a * b).sum(), y.iter().map(|v| *v > 0.0).collect())
        };
        let mut y = vec![0.0; d];
        emb.forward(&p, &x, &mut y);
        let mut g = vec![0.0; len];
        emb.backward(&p, &x, &y, &proj, &mut g, None);
        let k = rng.random_range(0..len);
        let (mut pp, mut pm) = (p.clone(), p.clone());
        pp[k] += h;
        pm[k] -= h;
        let ((fp, mp), (fm, mm)) = (f(&pp), f(&pm));
        if mp != mm {
            t.result.skipped += 1;
            continue;
        }
        t.record(g[k], (fp - fm) / (2.0 * h));
    }
    out.push(t.result);

    let mut b = ParamBuilder::default();
    let cell = LstmCell::new(&mut b, "W_LSTM", 2 * d, d);
    let (len, _) = b.finish();
    let mut t = Tally::new("lstm", "W_LSTM", cfg.tolerance_local, cfg.floor);
    while t.result.probes < cfg.probes {
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..d).map(|_| rng.random_range(-0.9..0.9)).collect();
        let c0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wh: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wc: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |p: &[f64]| {
            let c = cell.forward(p, &x, &h0, &c0);
            c.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>() + c.c.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>()
        };
        let cache = cell.forward(&p, &x, &h0, &c0);
        let mut g = vec![0.0; len];
        let (mut dx, mut dh, mut dc) = (vec![0.0; 2 * d], vec![0.0; d], vec![0.0; d]);
        cell.backward(&p, &cache, &x, &h0, &c0, &wh, &wc, &mut g, &mut dx, &mut dh, &mut dc);
        for _ in 0..10 {
            let k = rng.random_range(0..len);
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[k] += h;
            pm[k] -= h;
            t.record(g[k], (f(&pp) - f(&pm)) / (2.0 * h));
        }
    }
    out.push(t.result);
}

/// A 20-sample window of a conversational group with jittered heads, so
/// that every pedestrian pools at least one neighbour.
pub fn gradcheck_window(seed: u64, t_pred: usize) -> Result<Window> {
    let spec = SyntheticSpec {
        frames: t_pred,
        head_noise_deg: 10.0,
        position_noise: 0.01,
        seed,
        ..SyntheticSpec::new(Scenario::GroupConversation)
    };
    let scene = generate_synthetic(&spec)?;
    extract_windows(&scene, t_pred, 1)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Validation("gradcheck scene produced no window".into()))
}

/// Checks the full-window gradient of `variant` family by family.
pub fn bptt_suite(variant: Variant, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Vec<BlockResult>> {
    let hyper = Hyperparams {
        hidden: cfg.hidden,
        ..Default::default()
    };
    let mut model = MxLstm::new(variant, hyper, cfg.seed)?;
    let window = gradcheck_window(cfg.seed, hyper.t_pred)?;
    model.normalization = Normalization::fit(std::slice::from_ref(&window));
    let base = model.forward_window::<ChaCha8Rng>(&window, None)?;
    let scale = 1.0 / base.terms as f64;
    let mut grad = Gradient::new(&model);
    model.backward_window(&base, &mut grad);
    if cfg.corrupt {
        let r = model.layout.output.weight_range();
        for v in &mut grad.values[r] {
            *v += 1e-2 * (1.0 + v.abs());
        }
    }
    let suite = format!("bptt-{}", variant.name());
    let mut results = Vec::new();
    for (family, ranges) in model.layout.families() {
        let candidates: Vec<Range<usize>> = if family == "W_H" {
            let pool = model.layout.emb_pool.expect("pooling variant");
            let mut c: Vec<Range<usize>> = grad.touched_cells().map(|cell| pool.block_range(cell)).collect();
            c.push(pool.bias_range());
            c
        } else {
            ranges
        };
        let total: usize = candidates.iter().map(|r| r.len()).sum();
        if total == 0 {
            return Err(Error::Validation(format!("{family} has no parameters to probe")));
        }
        let mut t = Tally::new(&suite, family, cfg.tolerance_bptt, cfg.floor);
        let mut attempts = 0usize;
        while t.result.probes < cfg.probes && attempts < 20 * cfg.probes {
            attempts += 1;
            let mut pick = rng.random_range(0..total);
            let idx = candidates
                .iter()
                .find_map(|r| {
                    if pick < r.len() {
                        Some(r.start + pick)
                    } else {
                        pick -= r.len();
                        None
                    }
                })
                .expect("index in range");
            let orig = model.params[idx];
            model.params[idx] = orig + cfg.step;
            let plus = model.forward_window::<ChaCha8Rng>(&window, None)?;
            model.params[idx] = orig - cfg.step;
            let minus = model.forward_window::<ChaCha8Rng>(&window, None)?;
            model.params[idx] = orig;
            if plus.relu_signature != base.relu_signature || minus.relu_signature != base.relu_signature {
                t.result.skipped += 1;
                continue;
            }
            let num = (plus.loss - minus.loss) * scale / (2.0 * cfg.step);
            t.record(grad.values[idx] * scale, num);
        }
        results.push(t.result);
    }
    Ok(results)
}

/// Runs every suite.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blocks = Vec::new();
    nll_suite(cfg, &mut rng, &mut blocks)?;
    layer_suites(cfg, &mut rng, &mut blocks);
    for variant in [Variant::Full, Variant::BlockDiagonal, Variant::Vanilla] {
        blocks.extend(bptt_suite(variant, cfg, &mut rng)?);
    }
    Ok(GradcheckReport { blocks })
}
