//! End-to-end runs of the `mxcast` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mxcast::data::parse_trajectory_file;
use mxcast::eval::lagged_correlation;
use mxcast::model::{load_checkpoint, write_checkpoint};
use mxcast_cli::{EXIT_DIVERGENCE, EXIT_GRADCHECK, EXIT_IO, EXIT_PARSE, EXIT_USAGE, EXIT_VALIDATION};

fn mxcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxcast"))
        .current_dir(dir)
        .env_remove("MXCAST_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mxcast(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, name: &str, scenario: &str, episodes: usize) -> PathBuf {
    let e = episodes.to_string();
    ok(dir, &["synth", "--scenario", scenario, "--episodes", &e, "--seed", "1", "-o", name]);
    dir.join(name)
}

const SMALL: &[&str] = &["--hidden", "8", "--batch-size", "4"];

fn train(dir: &Path, data: &str, ck: &str, epochs: usize, extra: &[&str]) -> Output {
    let e = epochs.to_string();
    let mut args = vec!["--threads", "1", "train", "--data", data, "--checkpoint", ck, "--epochs", &e];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    mxcast(dir, &args)
}

fn losses(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_is_deterministic_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.txt", "linear", 3);
    let b = synth(dir.path(), "b.txt", "linear", 3);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let g = synth(dir.path(), "g.txt", "group_conversation", 3);
    let scene = parse_trajectory_file(&g, 0.5).unwrap();
    scene.validate().unwrap();
    assert_eq!(scene.tracks.len(), 12);
}

#[test]
fn analyze_recovers_head_lead() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--scenario", "turn_with_head_lead", "--lead", "3", "--episodes", "20", "-o", "t.txt"]);
    let out = ok(dir.path(), &["analyze", "--data", "t.txt", "-o", "stats"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let scan: Vec<(usize, f64)> = text
        .split("lag_frames\tcorrelation\n")
        .nth(1)
        .unwrap()
        .lines()
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let best = scan.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, 3, "{scan:?}");
    assert!(dir.path().join("stats/bins.csv").exists() && dir.path().join("stats/tracks.csv").exists());
    let scene = parse_trajectory_file(&dir.path().join("t.txt"), 0.5).unwrap();
    assert!(lagged_correlation(&scene, 0.45, 3).unwrap().unwrap() > lagged_correlation(&scene, 0.45, 0).unwrap().unwrap());
}

#[test]
fn train_writes_loadable_checkpoint_and_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "t.txt", "turn_with_head_lead", 4);
    let out = train(dir.path(), "t.txt", "m.ck", 5, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(dir.path().join("m.ck")).unwrap();
    let ck = load_checkpoint(&dir.path().join("m.ck")).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&mut again, &ck).unwrap();
    assert_eq!(again, bytes);
    assert_eq!(ck.epochs_done, 5);
    assert_eq!(losses(&dir.path().join("m.ck.loss.csv")), ck.loss_curve);
}

#[test]
fn vanilla_trains_on_position_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), "t.txt", "linear", 4);
    let text = std::fs::read_to_string(&path).unwrap();
    let stripped: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                l.replace("\thead_angle_deg", "")
            } else {
                l.rsplit_once('\t').unwrap().0.to_string()
            }
        })
        .collect();
    std::fs::write(dir.path().join("p.txt"), stripped.join("\n")).unwrap();
    let out = train(dir.path(), "p.txt", "v.ck", 3, &["--variant", "vanilla"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = train(dir.path(), "p.txt", "f.ck", 3, &["--variant", "full"]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    ok(dir.path(), &["evaluate", "--checkpoint", "v.ck", "--data", "p.txt"]);
}

#[test]
fn resume_continues_the_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "t.txt", "turn_with_head_lead", 6);
    assert_eq!(code(&train(dir.path(), "t.txt", "a.ck", 6, &[])), 0);
    assert_eq!(code(&train(dir.path(), "t.txt", "b.ck", 12, &["--resume", "a.ck"])), 0);
    assert_eq!(code(&train(dir.path(), "t.txt", "c.ck", 12, &[])), 0);
    let resumed = losses(&dir.path().join("b.ck.loss.csv"));
    assert_eq!(resumed.len(), 12);
    for w in resumed.windows(2) {
        let jump = (w[1] - w[0]) / w[0].abs();
        assert!(jump <= 0.10, "loss jumped from {} to {}", w[0], w[1]);
    }
    assert_eq!(resumed, losses(&dir.path().join("c.ck.loss.csv")));
    assert_eq!(std::fs::read(dir.path().join("b.ck")).unwrap(), std::fs::read(dir.path().join("c.ck")).unwrap());
}

#[test]
fn evaluation_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "t.txt", "turn_with_head_lead", 4);
    assert_eq!(code(&train(dir.path(), "t.txt", "m.ck", 3, &[])), 0);
    let base = ["evaluate", "--checkpoint", "m.ck", "--data", "t.txt"];
    let a = ok(dir.path(), &base).stdout;
    let b = ok(dir.path(), &base).stdout;
    let c = ok(dir.path(), &[&base[..], &["--noise-sigma", "0"]].concat()).stdout;
    assert_eq!(a, b);
    assert_eq!(a, c);
    let d = ok(dir.path(), &[&base[..], &["--noise-sigma", "16"]].concat()).stdout;
    assert_ne!(a, d);
    ok(dir.path(), &[&base[..], &["--report", "r.csv"]].concat());
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("ped_id,start_frame,mad_m"));
}

fn report_mad(stdout: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    let line = text.lines().find(|l| l.starts_with("mad_m\t")).unwrap();
    line.split('\t').nth(1).unwrap().parse().unwrap()
}

#[test]
fn noise_sweep_degrades_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train.txt", "turn_with_head_lead", 60);
    ok(dir.path(), &["synth", "--scenario", "turn_with_head_lead", "--episodes", "20", "--seed", "2", "-o", "test.txt"]);
    let out = mxcast(
        dir.path(),
        &["--threads", "1", "train", "--data", "train.txt", "--checkpoint", "m.ck", "--epochs", "25", "--hidden", "16", "--batch-size", "8"],
    );
    assert_eq!(code(&out), 0);
    let mads: Vec<f64> = [0, 8, 16, 24, 32]
        .iter()
        .map(|s| {
            let s = s.to_string();
            report_mad(&ok(dir.path(), &["evaluate", "--checkpoint", "m.ck", "--data", "test.txt", "--noise-sigma", &s]).stdout)
        })
        .collect();
    let inversions = mads.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(inversions <= 1, "{mads:?}");
    assert!(mads[4] > mads[0], "{mads:?}");
}

#[test]
fn forecast_and_counterfactual_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "t.txt", "turn_with_head_lead", 2);
    assert_eq!(code(&train(dir.path(), "t.txt", "m.ck", 2, &[])), 0);
    let a = ok(dir.path(), &["forecast", "--checkpoint", "m.ck", "--data", "t.txt", "--start-frame", "0"]).stdout;
    let text = String::from_utf8(a.clone()).unwrap();
    assert!(text.starts_with("ped_id,frame,x,y,head_angle_deg\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 12);
    let b = ok(dir.path(), &["forecast", "--checkpoint", "m.ck", "--data", "t.txt", "--start-frame", "0", "--override-deg", "180"]).stdout;
    assert_ne!(a, b);
    let s = ok(dir.path(), &["forecast", "--checkpoint", "m.ck", "--data", "t.txt", "--start-frame", "0", "--mode", "sampled", "--seed", "4"]).stdout;
    assert_ne!(a, s);
}

#[test]
fn gradcheck_passes_fails_on_corruption_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["gradcheck", "--seed", "3"]);
    let b = ok(dir.path(), &["gradcheck", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let bad = mxcast(dir.path(), &["gradcheck", "--seed", "3", "--corrupt-gradient"]);
    assert_eq!(code(&bad), EXIT_GRADCHECK);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&mxcast(d, &["frobnicate"])), EXIT_USAGE);
    assert_eq!(code(&mxcast(d, &["train", "--data", "missing.txt", "--checkpoint", "m.ck"])), EXIT_IO);

    std::fs::write(d.join("bad.txt"), "# mxcast-trajectories v1\n# units=meters\n0\t1\tx\t0\n").unwrap();
    assert_eq!(code(&mxcast(d, &["analyze", "--data", "bad.txt"])), EXIT_PARSE);
    std::fs::write(d.join("bad.cfg"), "hidden = many\n").unwrap();
    assert_eq!(code(&mxcast(d, &["--config", "bad.cfg", "config"])), EXIT_PARSE);
    std::fs::write(d.join("junk.ck"), b"not a checkpoint").unwrap();
    synth(d, "t.txt", "turn_with_head_lead", 2);
    assert_eq!(code(&mxcast(d, &["evaluate", "--checkpoint", "junk.ck", "--data", "t.txt"])), EXIT_PARSE);

    // Too short for a 20-sample window.
    ok(d, &["synth", "--scenario", "linear", "--frames", "10", "-o", "short.txt"]);
    assert_eq!(code(&train(d, "short.txt", "s.ck", 1, &[])), EXIT_VALIDATION);
}

#[test]
fn divergence_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "t.txt", "turn_with_head_lead", 6);
    assert_eq!(code(&train(dir.path(), "t.txt", "m.ck", 2, &[])), 0);
    let good = load_checkpoint(&dir.path().join("m.ck")).unwrap();
    let out = train(dir.path(), "t.txt", "d.ck", 10, &["--resume", "m.ck", "--lr", "1e6", "--set", "clip_norm=none"]);
    assert_eq!(code(&out), EXIT_DIVERGENCE, "{}", String::from_utf8_lossy(&out.stderr));
    let kept = load_checkpoint(&dir.path().join("d.ck")).unwrap();
    assert!(kept.epochs_done >= good.epochs_done && kept.epochs_done < 10);
    assert!(kept.model.params.iter().all(|v| v.is_finite()));
    assert_eq!(losses(&dir.path().join("d.ck.loss.csv")), kept.loss_curve);
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.cfg"), "hidden = 24\nepochs = 7\n").unwrap();
    let get = |out: Output, key: &str| -> String {
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().find_map(|l| l.strip_prefix(&format!("{key} = "))).unwrap().to_string()
    };
    let run = |args: &[&str], env_seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mxcast"));
        c.current_dir(d).env_remove("MXCAST_SEED");
        if let Some(s) = env_seed {
            c.env("MXCAST_SEED", s);
        }
        c.args(args).output().unwrap()
    };
    assert_eq!(get(run(&["config"], None), "seed"), "0");
    assert_eq!(get(run(&["config"], Some("42")), "seed"), "42");
    std::fs::write(d.join("s.cfg"), "seed = 5\n").unwrap();
    assert_eq!(get(run(&["--config", "s.cfg", "config"], Some("42")), "seed"), "5");
    assert_eq!(get(run(&["--config", "s.cfg", "--set", "seed=9", "config"], Some("42")), "seed"), "9");
    assert_eq!(get(run(&["--config", "a.cfg", "config"], None), "hidden"), "24");
    assert_eq!(get(run(&["--config", "a.cfg", "--set", "hidden=12", "config"], None), "hidden"), "12");
    let printed = run(&["--config", "a.cfg", "config"], None).stdout;
    std::fs::write(d.join("round.cfg"), &printed).unwrap();
    assert_eq!(run(&["--config", "round.cfg", "config"], None).stdout, printed);
    for shipped in ["ucy_style.cfg", "synthetic_turn.cfg"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(shipped);
        let out = run(&["--config", path.to_str().unwrap(), "config"], None);
        assert!(out.status.success(), "{shipped}");
    }
}
