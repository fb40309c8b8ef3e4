//! Training convergence, determinism and resumption.

use mxcast::data::{generate_synthetic, parse_trajectories, write_trajectories, Scenario, SyntheticSpec};
use mxcast::model::{extract_windows, read_checkpoint, write_checkpoint, Checkpoint, Hyperparams, MxLstm, TrainConfig, Trainer, Variant, Window};
use mxcast::nn::AdamConfig;

fn hyper(hidden: usize) -> Hyperparams {
    Hyperparams {
        hidden,
        ..Hyperparams::default()
    }
}

fn windows(scenario: Scenario, episodes: usize, seed: u64) -> Vec<Window> {
    let scene = generate_synthetic(&SyntheticSpec {
        episodes,
        seed,
        ..SyntheticSpec::new(scenario)
    })
    .unwrap();
    extract_windows(&scene, 20, 30)
}

fn trainer(variant: Variant, hidden: usize, windows: &[Window]) -> Trainer {
    let mut t = Trainer::new(MxLstm::new(variant, hyper(hidden), 3).unwrap(), AdamConfig::default());
    t.fit_normalization(windows);
    t
}

#[test]
fn linear_walk_loss_halves() {
    let scene = generate_synthetic(&SyntheticSpec {
        pedestrians: 1,
        seed: 2,
        ..SyntheticSpec::new(Scenario::Linear)
    })
    .unwrap();
    let w = extract_windows(&scene, 20, 1);
    assert_eq!(w.len(), 1);
    let mut t = trainer(Variant::Full, 8, &w);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..Default::default()
    };
    let report = t.train(&w, &cfg, |_, _| {}).unwrap();
    let (first, last) = (report.loss_curve[0], *report.loss_curve.last().unwrap());
    assert_eq!(report.loss_curve.len(), 200);
    assert!(last <= first - 0.5 * first.abs(), "epoch 0 {first}, final {last}");
}

#[test]
fn vanilla_trains_on_position_only_data() {
    let scene = generate_synthetic(&SyntheticSpec {
        episodes: 4,
        ..SyntheticSpec::new(Scenario::Linear)
    })
    .unwrap();
    let text = write_trajectories(&scene).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                l.replace("\thead_angle_deg", "")
            } else {
                l.rsplit_once('\t').unwrap().0.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let positions_only = parse_trajectories(&stripped, 0.5).unwrap();
    assert!(!positions_only.has_vislets());
    let w = extract_windows(&positions_only, 20, 30);
    let mut t = trainer(Variant::Vanilla, 8, &w);
    let cfg = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let report = t.train(&w, &cfg, |_, _| {}).unwrap();
    assert!(report.loss_curve.iter().all(|l| l.is_finite()));
    assert!(trainer(Variant::Full, 8, &w).train(&w, &cfg, |_, _| {}).is_err());
}

fn run_in_pool(threads: usize, w: &[Window], cfg: &TrainConfig) -> Trainer {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut t = trainer(Variant::Full, 8, w);
        t.train(w, cfg, |_, _| {}).unwrap();
        t
    })
}

#[test]
fn training_is_bitwise_independent_of_thread_count() {
    let w = windows(Scenario::GroupConversation, 6, 4);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        sampling_probability: 0.5,
        head_noise_deg: 10.0,
        ..Default::default()
    };
    let one = run_in_pool(1, &w, &cfg);
    let two = run_in_pool(2, &w, &cfg);
    assert_eq!(one, two);
    assert_eq!(one, run_in_pool(1, &w, &cfg));
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let w = windows(Scenario::TurnWithHeadLead, 6, 5);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 4,
        sampling_probability: 0.3,
        head_noise_deg: 8.0,
        ..Default::default()
    };
    let mut straight = trainer(Variant::Full, 8, &w);
    straight.train(&w, &cfg, |_, _| {}).unwrap();

    let mut first = trainer(Variant::Full, 8, &w);
    first.train(&w, &TrainConfig { epochs: 2, ..cfg }, |_, _| {}).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &Checkpoint::from_trainer(&first)).unwrap();
    let mut resumed = read_checkpoint(bytes.as_slice()).unwrap().into_trainer();
    resumed.fit_normalization(&windows(Scenario::Linear, 2, 9));
    resumed.train(&w, &cfg, |_, _| {}).unwrap();

    assert_eq!(resumed.epochs_done, 4);
    assert_eq!(resumed.loss_curve, straight.loss_curve);
    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.optimizer, straight.optimizer);
}

#[test]
fn failed_epoch_restores_last_complete_epoch() {
    let w = windows(Scenario::Linear, 2, 6);
    let mut t = trainer(Variant::Full, 8, &w);
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    t.train(&w, &cfg, |_, _| {}).unwrap();
    let good = t.clone();
    let mut bad = w.clone();
    bad[0].peds[0].positions[12].x = f64::NAN;
    assert!(t.train(&bad, &TrainConfig { epochs: 2, ..cfg }, |_, _| {}).is_err());
    assert_eq!(t.model.params, good.model.params);
    assert_eq!(t.optimizer, good.optimizer);
    assert_eq!(t.epochs_done, 1);
}
