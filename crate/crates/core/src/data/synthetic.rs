//! Seeded synthetic scenes.
//!
//! A spec describes `episodes` independent episodes of `frames` samples
//! each. Episodes occupy disjoint frame blocks of one scene, separated by a
//! gap, so no window extracted with the episode length straddles two of
//! them. Pedestrian ids are unique across the whole scene.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{vislet_from_angle, wrap_angle, HeadAngle, PedestrianTrack, Position, Sample, Scene, DEFAULT_FRAME_PERIOD, DEFAULT_VISLET_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Constant-velocity walkers looking where they go.
    Linear,
    /// Walkers that turn once; the head turns `head_lead` frames earlier.
    TurnWithHeadLead,
    /// A standing group: one member leaves after looking at the exit, the
    /// others follow once the leader has moved away, one member stays.
    GroupConversation,
    /// Slow walkers whose heads wander independently of their path.
    SlowWander,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Linear,
        Scenario::TurnWithHeadLead,
        Scenario::GroupConversation,
        Scenario::SlowWander,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::TurnWithHeadLead => "turn_with_head_lead",
            Scenario::GroupConversation => "group_conversation",
            Scenario::SlowWander => "slow_wander",
        }
    }

    /// Default speed range in m/s.
    pub fn default_speed(self) -> (f64, f64) {
        match self {
            Scenario::Linear => (0.8, 1.6),
            Scenario::TurnWithHeadLead => (0.9, 1.5),
            Scenario::GroupConversation => (0.25, 0.4),
            Scenario::SlowWander => (0.1, 0.4),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
    pub episodes: usize,
    /// Pedestrians per episode; the group size for group scenes.
    pub pedestrians: usize,
    /// Samples per episode.
    pub frames: usize,
    /// Walking speed range, m/s.
    pub speed: (f64, f64),
    /// Frames by which a head turn precedes the matching path turn.
    pub head_lead: usize,
    /// Standard deviation of per-sample head jitter, degrees.
    pub head_noise_deg: f64,
    /// Standard deviation of per-sample position jitter, meters.
    pub position_noise: f64,
    pub frame_period: f64,
    pub vislet_radius: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(scenario: Scenario) -> SyntheticSpec {
        SyntheticSpec {
            scenario,
            episodes: 1,
            pedestrians: if scenario == Scenario::GroupConversation { 4 } else { 3 },
            frames: 20,
            speed: scenario.default_speed(),
            head_lead: 3,
            head_noise_deg: 0.0,
            position_noise: 0.0,
            frame_period: DEFAULT_FRAME_PERIOD,
            vislet_radius: DEFAULT_VISLET_RADIUS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.speed;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(format!("invalid speed range [{lo}, {hi}]")));
        }
        if self.frames < 2 {
            return Err(Error::Validation("episodes need at least 2 frames".into()));
        }
        if !(self.frame_period > 0.0) || !(self.vislet_radius > 0.0) {
            return Err(Error::Validation("frame period and vislet radius must be positive".into()));
        }
        if !(self.head_noise_deg >= 0.0) || !(self.position_noise >= 0.0) {
            return Err(Error::Validation("noise levels must be non-negative".into()));
        }
        if self.scenario == Scenario::GroupConversation {
            if self.pedestrians < 3 {
                return Err(Error::Validation("a conversation group needs at least 3 members".into()));
            }
            if hi >= 0.45 {
                return Err(Error::Validation(format!("group members must stay below 0.45 m/s, got {hi}")));
            }
        }
        Ok(())
    }
}

/// Ideal (noise-free) states of one pedestrian.
struct Path {
    positions: Vec<Position>,
    heads: Vec<f64>,
}

fn unit(a: f64) -> Position {
    Position::new(a.cos(), a.sin())
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn heading_to(from: Position, to: Position) -> f64 {
    let d = to - from;
    d.y.atan2(d.x)
}

fn linear(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Path> {
    (0..spec.pedestrians)
        .map(|_| {
            let start = Position::new(uniform(rng, -5.0, 5.0), uniform(rng, -5.0, 5.0));
            let heading = uniform(rng, -PI, PI);
            let step = uniform(rng, spec.speed.0, spec.speed.1) * spec.frame_period;
            let dir = unit(heading);
            Path {
                positions: (0..spec.frames).map(|s| start + dir * (step * s as f64)).collect(),
                heads: vec![heading; spec.frames],
            }
        })
        .collect()
}

fn turn_with_head_lead(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Path> {
    let last = spec.frames as i64 - 1;
    (0..spec.pedestrians)
        .map(|_| {
            let start = Position::new(uniform(rng, -8.0, 8.0), uniform(rng, -8.0, 8.0));
            let before = uniform(rng, -PI, PI);
            let magnitude = uniform(rng, 45f64.to_radians(), 100f64.to_radians());
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let after = wrap_angle(before + sign * magnitude);
            let turn = rng.random_range(8..=10i64).min(last);
            let step = uniform(rng, spec.speed.0, spec.speed.1) * spec.frame_period;
            // Direction of travel from s to s + 1.
            let beta = |s: i64| if s < turn { before } else { after };
            let mut positions = vec![start];
            for s in 0..last {
                let p = *positions.last().expect("non-empty");
                positions.push(p + unit(beta(s)) * step);
            }
            let heads = (0..=last).map(|s| beta(s + spec.head_lead as i64)).collect();
            Path { positions, heads }
        })
        .collect()
}

fn group_conversation(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Path> {
    let g = spec.pedestrians;
    let n = spec.frames;
    let dt = spec.frame_period;
    let centre = Position::new(uniform(rng, -5.0, 5.0), uniform(rng, -5.0, 5.0));
    let radius = uniform(rng, 0.6, 0.9);
    let phase = uniform(rng, -PI, PI);
    let start: Vec<Position> = (0..g)
        .map(|k| centre + unit(phase + 2.0 * PI * k as f64 / g as f64 + uniform(rng, -0.2, 0.2)) * radius)
        .collect();

    // Leader: looks at the exit, then walks towards it.
    let exit = heading_to(centre, start[0]) + uniform(rng, -PI / 3.0, PI / 3.0);
    let look = rng.random_range(4..=7usize).min(n - 1);
    let walk = look + spec.head_lead;
    let leader_step = uniform(rng, spec.speed.0, spec.speed.1) * dt;
    let mut leader = Path {
        positions: Vec::with_capacity(n),
        heads: Vec::with_capacity(n),
    };
    let mut p = start[0];
    for s in 0..n {
        if s > walk {
            p = p + unit(exit) * leader_step;
        }
        leader.positions.push(p);
        leader.heads.push(if s >= look { exit } else { heading_to(start[0], centre) });
    }

    let mut paths = vec![leader];
    // Followers keep their eyes on the leader and set off once it is 0.6 m
    // away from where it stood, stopping 0.6 m behind it.
    for &origin in &start[1..g - 1] {
        let step = uniform(rng, spec.speed.0, spec.speed.1) * dt;
        let mut p = origin;
        let mut started = false;
        let mut path = Path {
            positions: Vec::with_capacity(n),
            heads: Vec::with_capacity(n),
        };
        for s in 0..n {
            let target = paths[0].positions[s];
            if s > 0 {
                started |= paths[0].positions[s - 1].distance(&start[0]) >= 0.6;
                if started {
                    let gap = p.distance(&target) - 0.6;
                    if gap > 0.0 {
                        p = p + unit(heading_to(p, target)) * step.min(gap);
                    }
                }
            }
            path.positions.push(p);
            path.heads.push(heading_to(p, target));
        }
        paths.push(path);
    }

    // The last member keeps facing the group while drifting back slowly.
    let away = heading_to(centre, start[g - 1]);
    let drift = 0.05 * dt;
    paths.push(Path {
        positions: (0..n).map(|s| start[g - 1] + unit(away) * (drift * s as f64)).collect(),
        heads: vec![wrap_angle(away + PI); n],
    });
    paths
}

fn slow_wander(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Path> {
    let turn = Normal::new(0.0, 15f64.to_radians()).expect("valid sigma");
    let glance = Normal::new(0.0, 20f64.to_radians()).expect("valid sigma");
    (0..spec.pedestrians)
        .map(|_| {
            let mut p = Position::new(uniform(rng, -5.0, 5.0), uniform(rng, -5.0, 5.0));
            let mut heading = uniform(rng, -PI, PI);
            let mut offset = uniform(rng, -PI / 2.0, PI / 2.0);
            let step = uniform(rng, spec.speed.0, spec.speed.1) * spec.frame_period;
            let mut path = Path {
                positions: Vec::with_capacity(spec.frames),
                heads: Vec::with_capacity(spec.frames),
            };
            for _ in 0..spec.frames {
                path.positions.push(p);
                path.heads.push(wrap_angle(heading + offset));
                p = p + unit(heading) * step;
                heading = wrap_angle(heading + turn.sample(rng));
                offset = (offset + glance.sample(rng)).clamp(-PI * 0.9, PI * 0.9);
            }
            path
        })
        .collect()
}

/// Generates the scene described by `spec`; a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let head_noise = Normal::new(0.0, spec.head_noise_deg.to_radians()).map_err(|e| Error::Validation(e.to_string()))?;
    let pos_noise = Normal::new(0.0, spec.position_noise).map_err(|e| Error::Validation(e.to_string()))?;
    let block = spec.frames as i64 + 10;
    let mut tracks = Vec::new();
    let mut next_id = 1i64;
    for episode in 0..spec.episodes {
        let paths = match spec.scenario {
            Scenario::Linear => linear(spec, &mut rng),
            Scenario::TurnWithHeadLead => turn_with_head_lead(spec, &mut rng),
            Scenario::GroupConversation => group_conversation(spec, &mut rng),
            Scenario::SlowWander => slow_wander(spec, &mut rng),
        };
        for path in paths {
            let mut samples = Vec::with_capacity(path.positions.len());
            for (s, (&p, &alpha)) in path.positions.iter().zip(&path.heads).enumerate() {
                let mut pos = p;
                if spec.position_noise > 0.0 {
                    pos = pos + Position::new(pos_noise.sample(&mut rng), pos_noise.sample(&mut rng));
                }
                let mut a = alpha;
                if spec.head_noise_deg > 0.0 {
                    a += head_noise.sample(&mut rng);
                }
                samples.push(Sample {
                    frame: episode as i64 * block + s as i64,
                    position: pos,
                    vislet: Some(vislet_from_angle(pos, HeadAngle::new(a), spec.vislet_radius)?),
                });
            }
            tracks.push(PedestrianTrack::new(next_id, samples));
            next_id += 1;
        }
    }
    Ok(Scene {
        tracks,
        frame_period: spec.frame_period,
        frame_step: 1,
        vislet_radius: spec.vislet_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{angle_from_vislet, angular_distance, movement_angle};

    #[test]
    fn linear_displacements_match_speed() {
        let spec = SyntheticSpec {
            speed: (1.2, 1.2),
            episodes: 3,
            ..SyntheticSpec::new(Scenario::Linear)
        };
        let scene = generate_synthetic(&spec).unwrap();
        assert_eq!(scene.tracks.len(), 9);
        for t in &scene.tracks {
            for w in t.samples.windows(2) {
                let d = w[0].position.distance(&w[1].position);
                assert!((d - 1.2 * 0.4).abs() < 1e-9, "{d}");
            }
        }
        scene.validate().unwrap();
    }

    #[test]
    fn head_turn_precedes_path_turn() {
        let spec = SyntheticSpec {
            episodes: 5,
            ..SyntheticSpec::new(Scenario::TurnWithHeadLead)
        };
        let scene = generate_synthetic(&spec).unwrap();
        for t in &scene.tracks {
            let s = &t.samples;
            for k in 0..s.len() - 4 {
                let alpha = angle_from_vislet(&s[k].vislet.unwrap()).unwrap().radians();
                let beta = movement_angle(s[k + 3].position, s[k + 4].position).unwrap().radians();
                assert!(angular_distance(alpha, beta) < 1e-9);
            }
        }
    }

    #[test]
    fn group_speeds_stay_slow() {
        let spec = SyntheticSpec {
            episodes: 20,
            seed: 4,
            ..SyntheticSpec::new(Scenario::GroupConversation)
        };
        let scene = generate_synthetic(&spec).unwrap();
        for t in &scene.tracks {
            for w in t.samples.windows(2) {
                assert!(w[0].position.distance(&w[1].position) / 0.4 < 0.45);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for scenario in Scenario::ALL {
            let spec = SyntheticSpec {
                seed: 11,
                head_noise_deg: 5.0,
                position_noise: 0.01,
                episodes: 2,
                ..SyntheticSpec::new(scenario)
            };
            assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
            let other = SyntheticSpec { seed: 12, ..spec };
            assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
        }
    }

    #[test]
    fn invalid_specs() {
        let fast_group = SyntheticSpec {
            speed: (0.3, 0.6),
            ..SyntheticSpec::new(Scenario::GroupConversation)
        };
        assert!(generate_synthetic(&fast_group).is_err());
        let pair = SyntheticSpec {
            pedestrians: 2,
            ..SyntheticSpec::new(Scenario::GroupConversation)
        };
        assert!(generate_synthetic(&pair).is_err());
        assert_eq!("slow_wander".parse::<Scenario>().unwrap(), Scenario::SlowWander);
    }
}
