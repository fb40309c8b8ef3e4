//! Synthetic scenes, head-pose noise and the trajectory file format.

use mxcast::data::{generate_synthetic, inject_head_noise, parse_trajectory_file, write_trajectory_file, Scenario, SyntheticSpec};
use mxcast::eval::{circular_correlation, SLOW_SPEED};
use mxcast::types::{angle_from_vislet, angular_distance, movement_angle, wrap_angle};

#[test]
fn head_lead_shows_in_circular_correlation() {
    let scene = generate_synthetic(&SyntheticSpec {
        episodes: 30,
        seed: 1,
        ..SyntheticSpec::new(Scenario::TurnWithHeadLead)
    })
    .unwrap();
    let (mut alpha, mut beta_now, mut beta_lead) = (Vec::new(), Vec::new(), Vec::new());
    for t in &scene.tracks {
        let s = &t.samples;
        for k in 0..s.len() - 4 {
            alpha.push(angle_from_vislet(s[k].vislet.as_ref().unwrap()).unwrap().radians());
            beta_now.push(movement_angle(s[k].position, s[k + 1].position).unwrap().radians());
            beta_lead.push(movement_angle(s[k + 3].position, s[k + 4].position).unwrap().radians());
        }
    }
    let now = circular_correlation(&alpha, &beta_now).unwrap().unwrap();
    let lead = circular_correlation(&alpha, &beta_lead).unwrap().unwrap();
    assert!(lead > now, "lead {lead} vs same-frame {now}");
}

#[test]
fn group_members_are_slow_and_heads_disagree_with_motion() {
    let scene = generate_synthetic(&SyntheticSpec {
        episodes: 20,
        seed: 2,
        ..SyntheticSpec::new(Scenario::GroupConversation)
    })
    .unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in &scene.tracks {
        for w in t.samples.windows(2) {
            let d = w[0].position.distance(&w[1].position);
            assert!(d / scene.frame_period < SLOW_SPEED);
            if d < 1e-9 {
                continue;
            }
            let alpha = angle_from_vislet(w[0].vislet.as_ref().unwrap()).unwrap().radians();
            let beta = movement_angle(w[0].position, w[1].position).unwrap().radians();
            let omega = angular_distance(alpha, beta).to_degrees();
            lo = lo.min(omega);
            hi = hi.max(omega);
        }
    }
    assert!(hi - lo > 90.0, "discrepancy span {lo}..{hi}");
}

#[test]
fn noise_has_requested_spread() {
    let scene = generate_synthetic(&SyntheticSpec {
        episodes: 200,
        seed: 3,
        ..SyntheticSpec::new(Scenario::SlowWander)
    })
    .unwrap();
    let noisy = inject_head_noise(&scene, 24.0, 4).unwrap();
    let mut d = Vec::new();
    for (a, b) in scene.tracks.iter().zip(&noisy.tracks) {
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.position, y.position);
            d.push(wrap_angle(y.head_angle().unwrap().radians() - x.head_angle().unwrap().radians()).to_degrees());
        }
    }
    let d = &d[..10_000];
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    assert!((22.0..=26.0).contains(&sd), "sd {sd}");
    assert_eq!(noisy, inject_head_noise(&scene, 24.0, 4).unwrap());
    assert_eq!(inject_head_noise(&scene, 0.0, 4).unwrap(), scene);
}

#[test]
fn files_round_trip_for_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in Scenario::ALL {
        let scene = generate_synthetic(&SyntheticSpec {
            episodes: 3,
            seed: 5,
            head_noise_deg: 7.0,
            position_noise: 0.02,
            ..SyntheticSpec::new(scenario)
        })
        .unwrap();
        let path = dir.path().join(format!("{scenario}.txt"));
        write_trajectory_file(&path, &scene).unwrap();
        let back = parse_trajectory_file(&path, scene.vislet_radius).unwrap();
        assert_eq!(back.tracks.len(), scene.tracks.len());
        assert_eq!(back.frame_step, scene.frame_step);
        for (a, b) in scene.tracks.iter().zip(&back.tracks) {
            assert_eq!(a.ped_id, b.ped_id);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(x.frame, y.frame);
                assert!((x.position.x - y.position.x).abs() <= 1e-6 && (x.position.y - y.position.y).abs() <= 1e-6);
                let (ax, ay) = (x.head_angle().unwrap().radians(), y.head_angle().unwrap().radians());
                assert!(angular_distance(ax, ay).to_degrees() <= 1e-4);
            }
        }
        // Serializing the parsed scene is a fixed point.
        let again = dir.path().join("again.txt");
        write_trajectory_file(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}
