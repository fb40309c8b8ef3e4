//! Command implementations shared by the binary and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mxcast::data::{generate_synthetic, inject_head_noise, parse_trajectory_file, write_trajectories};
use mxcast::eval::{evaluate, lag_scan_text, motivation_analysis, CorrelationReport, MetricReport};
use mxcast::gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
use mxcast::model::{
    counterfactual_forecast, extract_windows, forecast, forecast_scene, load_checkpoint, save_checkpoint, Checkpoint, ForecastResult,
    MxLstm, Trainer, Window,
};
use mxcast::nn::OptimizerState;
use mxcast::types::{HeadAngle, Scene};

use crate::{CliError, RunConfig};

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing {what} path")))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Generates a synthetic scene and writes it to `cfg.output` (stdout when unset).
pub fn synth(cfg: &RunConfig) -> Result<Scene, CliError> {
    let scene = generate_synthetic(&cfg.synthetic_spec())?;
    write_output(cfg.output.as_deref(), &write_trajectories(&scene)?)?;
    log::info!("generated {} tracks of scenario {}", scene.tracks.len(), cfg.scenario);
    Ok(scene)
}

fn with_path(path: &Path, e: mxcast::Error) -> CliError {
    match e {
        mxcast::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

pub fn load_scene(cfg: &RunConfig) -> Result<Scene, CliError> {
    let path = required(&cfg.data, "data")?;
    parse_trajectory_file(path, cfg.vislet_radius).map_err(|e| with_path(path, e))
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| with_path(path, e))
}

/// Sliding windows of `len` samples, failing when there are none.
pub fn windows_for(scene: &Scene, len: usize, stride: usize) -> Result<Vec<Window>, CliError> {
    let w = extract_windows(scene, len, stride);
    if w.is_empty() {
        return Err(mxcast::Error::EmptyReport(format!("no pedestrian spans {len} consecutive frames")).into());
    }
    Ok(w)
}

/// A fresh trainer for `cfg`, or the one stored in `resume`.
pub fn make_trainer(cfg: &RunConfig, resume: Option<Checkpoint>) -> Result<Trainer, CliError> {
    let train = cfg.train_config();
    Ok(match resume {
        Some(ck) => {
            let mut t = ck.into_trainer();
            t.optimizer.config = train.adam;
            t
        }
        None => {
            let model = MxLstm::new(cfg.variant, cfg.hyperparams(), cfg.seed)?;
            let n = model.param_count();
            Trainer {
                model,
                optimizer: OptimizerState::new(train.adam, n),
                epochs_done: 0,
                loss_curve: Vec::new(),
            }
        }
    })
}

/// Trains on `windows` until `cfg.epochs`. On failure the trainer holds the
/// state after the last complete epoch.
pub fn fit(trainer: &mut Trainer, windows: &[Window], cfg: &RunConfig) -> Result<(), CliError> {
    trainer.fit_normalization(windows);
    let t0 = std::time::Instant::now();
    trainer.train(windows, &cfg.train_config(), |epoch, loss| {
        log::info!("epoch {epoch}: loss {loss:.6} ({:.1}s)", t0.elapsed().as_secs_f64());
    })?;
    Ok(())
}

pub fn loss_csv(trainer: &Trainer) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trainer.loss_curve.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:.17e}");
    }
    s
}

/// Loss log path: `cfg.loss_log`, or the checkpoint path with `.loss.csv`.
pub fn loss_log_path(cfg: &RunConfig, checkpoint: &Path) -> PathBuf {
    cfg.loss_log.clone().unwrap_or_else(|| {
        let mut name = checkpoint.as_os_str().to_owned();
        name.push(".loss.csv");
        PathBuf::from(name)
    })
}

/// Full training command. The checkpoint and loss log are written even when
/// training diverges; they then hold the last good epoch.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<Trainer, CliError> {
    let out = required(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let scene = load_scene(cfg)?;
    let resume = resume.map(read_checkpoint_file).transpose()?;
    let mut trainer = make_trainer(cfg, resume)?;
    let windows = windows_for(&scene, trainer.model.hyper.t_pred, cfg.window_stride)?;
    log::info!(
        "training {} ({} parameters) on {} windows",
        trainer.model.variant,
        trainer.model.param_count(),
        windows.len()
    );
    let result = fit(&mut trainer, &windows, cfg);
    save_checkpoint(&out, &Checkpoint::from_trainer(&trainer)).map_err(|e| with_path(&out, e))?;
    write_output(Some(&loss_log_path(cfg, &out)), &loss_csv(&trainer))?;
    result.map(|_| trainer)
}

/// Forecasts every sliding window of `scene`, corrupting the observed head
/// poses with `cfg.noise_sigma_deg` first, and scores them against the clean
/// scene.
pub fn evaluate_model(model: &MxLstm, scene: &Scene, cfg: &RunConfig) -> Result<MetricReport, CliError> {
    let input = inject_head_noise(scene, cfg.noise_sigma_deg, cfg.seed)?;
    let windows = windows_for(&input, model.hyper.t_pred, cfg.window_stride)?;
    let opts = cfg.forecast_options();
    let forecasts: Vec<ForecastResult> = windows.iter().map(|w| forecast(model, w, &opts)).collect::<Result<_, _>>()?;
    Ok(evaluate(&forecasts, scene)?)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<MetricReport, CliError> {
    let ck = read_checkpoint_file(required(&cfg.checkpoint, "checkpoint")?)?;
    let scene = load_scene(cfg)?;
    let report = evaluate_model(&ck.model, &scene, cfg)?;
    print!("{}", report.to_text());
    if let Some(p) = &cfg.report {
        write_output(Some(p), &report.to_csv())?;
    }
    Ok(report)
}

pub fn forecast_csv(f: &ForecastResult) -> String {
    let mut s = String::from("ped_id,frame,x,y,head_angle_deg\n");
    for p in &f.peds {
        let heads = p.head_angles();
        for (k, (frame, pos)) in p.frames.iter().zip(&p.positions).enumerate() {
            let head = heads.as_ref().map_or(String::new(), |h| format!("{:.4}", h[k].degrees_positive()));
            let _ = writeln!(s, "{},{frame},{:.6},{:.6},{head}", p.ped_id, pos.x, pos.y);
        }
    }
    s
}

/// Forecasts the pedestrians observed from `start_frame`, optionally with
/// every observed head angle replaced by `override_deg`.
pub fn forecast_cmd(cfg: &RunConfig, start_frame: i64, override_deg: Option<f64>) -> Result<ForecastResult, CliError> {
    let ck = read_checkpoint_file(required(&cfg.checkpoint, "checkpoint")?)?;
    let scene = inject_head_noise(&load_scene(cfg)?, cfg.noise_sigma_deg, cfg.seed)?;
    let mut opts = cfg.forecast_options();
    opts.vislet_override = override_deg.map(HeadAngle::from_degrees);
    let result = forecast_scene(&ck.model, &scene, start_frame, &opts)?;
    write_output(cfg.output.as_deref(), &forecast_csv(&result))?;
    Ok(result)
}

/// Counterfactual rollout of one window with a fixed head angle.
pub fn counterfactual(model: &MxLstm, window: &Window, angle_deg: f64, cfg: &RunConfig) -> Result<ForecastResult, CliError> {
    Ok(counterfactual_forecast(model, window, HeadAngle::from_degrees(angle_deg), &cfg.forecast_options())?)
}

/// Alignment statistics plus the head-to-motion correlation at lags
/// `0..=max_lag`.
pub fn analyze(cfg: &RunConfig, max_lag: usize) -> Result<CorrelationReport, CliError> {
    let scene = load_scene(cfg)?;
    let report = motivation_analysis(&scene, cfg.velocity_threshold, cfg.bin_half_width)?;
    print!("{}", report.to_text());
    println!();
    print!("{}", lag_scan_text(&scene, cfg.velocity_threshold, max_lag)?);
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        write_output(Some(&dir.join("bins.csv")), &report.bins_csv())?;
        write_output(Some(&dir.join("tracks.csv")), &report.tracks_csv())?;
    }
    Ok(report)
}

pub fn gradcheck(seed: u64, probes: usize, corrupt: bool) -> Result<GradcheckReport, CliError> {
    let report = run_gradcheck(&GradcheckConfig {
        seed,
        probes,
        corrupt,
        ..GradcheckConfig::default()
    })?;
    print!("{}", report.to_text());
    if !report.passed() {
        return Err(CliError::Gradcheck(
            report
                .blocks
                .iter()
                .filter(|b| !b.passed())
                .map(|b| format!("{}/{}: {:.3e} > {:.0e}", b.suite, b.block, b.worst, b.tolerance))
                .collect::<Vec<_>>()
                .join("\n"),
        ));
    }
    Ok(report)
}
