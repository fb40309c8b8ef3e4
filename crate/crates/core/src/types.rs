//! Ground-plane data model: positions, vislets, head angles, tracks and scenes.
//!
//! All coordinates are meters on the ground plane and all angles are radians
//! measured counter-clockwise from the world +x axis, wrapped to `[-π, π)`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Default distance between a position and its vislet anchor, in meters.
pub const DEFAULT_VISLET_RADIUS: f64 = 0.5;

/// Default time between consecutive samples, in seconds.
pub const DEFAULT_FRAME_PERIOD: f64 = 0.4;

/// Wraps any real angle into `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut wrapped = angle - two_pi * ((angle + PI) / two_pi).floor();
    if wrapped >= PI {
        wrapped -= two_pi;
    }
    if wrapped < -PI {
        wrapped += two_pi;
    }
    wrapped
}

/// Absolute wrapped difference between two angles, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (*other - *self).norm()
    }

    pub fn dot(&self, other: &Position) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Position) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, rhs: f64) -> Position {
        Position::new(self.x * rhs, self.y * rhs)
    }
}

/// Head pan angle in radians, always stored wrapped to `[-π, π)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct HeadAngle(f64);

impl HeadAngle {
    pub fn new(radians: f64) -> Self {
        Self(wrap_angle(radians))
    }

    pub fn from_degrees(degrees: f64) -> Self {
        Self::new(degrees.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Degrees in `[0, 360)`, the convention used by annotation files.
    pub fn degrees_positive(self) -> f64 {
        let deg = self.0.to_degrees().rem_euclid(360.0);
        if deg >= 360.0 {
            0.0
        } else {
            deg
        }
    }

    pub fn unit(self) -> Position {
        Position::new(self.0.cos(), self.0.sin())
    }
}

/// Anchor point at a fixed radius from the position it belongs to; its
/// direction encodes the head pan without the 0/360 discontinuity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vislet {
    pub anchor: Position,
    pub origin: Position,
}

impl Vislet {
    pub fn radius(&self) -> f64 {
        self.origin.distance(&self.anchor)
    }

    /// Projects the anchor back onto the circle of radius `r` around the origin.
    pub fn renormalized(&self, r: f64) -> Result<Vislet> {
        let angle = angle_from_vislet(self)?;
        vislet_from_angle(self.origin, angle, r)
    }

    /// Same head direction, attached to a different origin.
    pub fn moved_to(&self, origin: Position) -> Vislet {
        let offset = self.anchor - self.origin;
        Vislet {
            anchor: origin + offset,
            origin,
        }
    }
}

/// Builds the vislet anchored at `origin + r·(cos α, sin α)`.
pub fn vislet_from_angle(origin: Position, alpha: HeadAngle, r: f64) -> Result<Vislet> {
    if !origin.is_finite() || !alpha.0.is_finite() || !r.is_finite() {
        return Err(Error::InvalidInput("non-finite vislet input".into()));
    }
    if r <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "vislet radius must be positive, got {r}"
        )));
    }
    Ok(Vislet {
        anchor: origin + alpha.unit() * r,
        origin,
    })
}

pub fn angle_from_vislet(v: &Vislet) -> Result<HeadAngle> {
    let d = v.anchor - v.origin;
    if !d.is_finite() {
        return Err(Error::InvalidInput("non-finite vislet".into()));
    }
    if d.x == 0.0 && d.y == 0.0 {
        return Err(Error::DegenerateVislet);
    }
    Ok(HeadAngle::new(d.y.atan2(d.x)))
}

/// Direction of the displacement from `p_t` to `p_t1`.
pub fn movement_angle(p_t: Position, p_t1: Position) -> Result<HeadAngle> {
    let d = p_t1 - p_t;
    if !d.is_finite() {
        return Err(Error::InvalidInput("non-finite position".into()));
    }
    if d.x == 0.0 && d.y == 0.0 {
        return Err(Error::UndefinedMotion);
    }
    Ok(HeadAngle::new(d.y.atan2(d.x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub frame: i64,
    pub position: Position,
    /// Absent for position-only data.
    pub vislet: Option<Vislet>,
}

impl Sample {
    pub fn head_angle(&self) -> Option<HeadAngle> {
        self.vislet.as_ref().and_then(|v| angle_from_vislet(v).ok())
    }
}

/// One contiguous run of samples for a pedestrian. A pedestrian whose frames
/// have gaps is stored as several tracks sharing `ped_id` with increasing
/// `segment`.
#[derive(Clone, Debug, PartialEq)]
pub struct PedestrianTrack {
    pub ped_id: i64,
    pub segment: u32,
    pub samples: Vec<Sample>,
}

impl PedestrianTrack {
    pub fn new(ped_id: i64, samples: Vec<Sample>) -> Self {
        Self {
            ped_id,
            segment: 0,
            samples,
        }
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.samples.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.samples.last().map(|s| s.frame)
    }

    pub fn has_vislets(&self) -> bool {
        self.samples.iter().all(|s| s.vislet.is_some())
    }

    /// Sample at `frame`, located by stride arithmetic.
    pub fn sample_at(&self, frame: i64, frame_step: i64) -> Option<&Sample> {
        let first = self.first_frame()?;
        let offset = frame - first;
        if offset < 0 || offset % frame_step != 0 {
            return None;
        }
        let sample = self.samples.get((offset / frame_step) as usize)?;
        (sample.frame == frame).then_some(sample)
    }

    pub fn validate(&self, frame_step: i64, radius: f64) -> Result<()> {
        for pair in self.samples.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(Error::Validation(format!(
                    "pedestrian {}: frames not strictly increasing ({} then {})",
                    self.ped_id, pair[0].frame, pair[1].frame
                )));
            }
            if pair[1].frame - pair[0].frame != frame_step {
                return Err(Error::Validation(format!(
                    "pedestrian {}: frame stride {} differs from scene stride {}",
                    self.ped_id,
                    pair[1].frame - pair[0].frame,
                    frame_step
                )));
            }
        }
        for s in &self.samples {
            if !s.position.is_finite() {
                return Err(Error::Validation(format!(
                    "pedestrian {}: non-finite position at frame {}",
                    self.ped_id, s.frame
                )));
            }
            if let Some(v) = &s.vislet {
                if v.origin != s.position || (v.radius() - radius).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "pedestrian {}: vislet at frame {} is not at radius {radius} from its position",
                        self.ped_id, s.frame
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub tracks: Vec<PedestrianTrack>,
    /// Seconds between consecutive samples.
    pub frame_period: f64,
    /// Frame-index increment between consecutive samples.
    pub frame_step: i64,
    pub vislet_radius: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            tracks: Vec::new(),
            frame_period: DEFAULT_FRAME_PERIOD,
            frame_step: 1,
            vislet_radius: DEFAULT_VISLET_RADIUS,
        }
    }
}

impl Scene {
    pub fn has_vislets(&self) -> bool {
        self.tracks.iter().all(|t| t.has_vislets())
    }

    pub fn sample_count(&self) -> usize {
        self.tracks.iter().map(|t| t.samples.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_step <= 0 {
            return Err(Error::Validation("frame step must be positive".into()));
        }
        if !(self.frame_period > 0.0) {
            return Err(Error::Validation("frame period must be positive".into()));
        }
        let mut keys = BTreeSet::new();
        for track in &self.tracks {
            if !keys.insert((track.ped_id, track.segment)) {
                return Err(Error::Validation(format!(
                    "duplicate track for pedestrian {} segment {}",
                    track.ped_id, track.segment
                )));
            }
            track.validate(self.frame_step, self.vislet_radius)?;
        }
        Ok(())
    }

    /// Every frame index at which at least one track has a sample.
    pub fn frames(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self
            .tracks
            .iter()
            .flat_map(|t| t.samples.iter().map(|s| s.frame))
            .collect();
        set.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn vislet_axis_aligned() {
        let v = vislet_from_angle(Position::new(0.0, 0.0), HeadAngle::new(0.0), 0.5).unwrap();
        assert_abs_diff_eq!(v.anchor.x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.anchor.y, 0.0, epsilon = 1e-12);

        let v = vislet_from_angle(Position::new(0.0, 0.0), HeadAngle::new(FRAC_PI_2), 0.5).unwrap();
        assert_abs_diff_eq!(v.anchor.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.anchor.y, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn vislet_diagonal() {
        let v = vislet_from_angle(Position::new(1.0, 1.0), HeadAngle::new(PI / 4.0), 0.5).unwrap();
        assert_abs_diff_eq!(v.anchor.x, 1.35355, epsilon = 1e-5);
        assert_abs_diff_eq!(v.anchor.y, 1.35355, epsilon = 1e-5);
        assert_abs_diff_eq!(v.radius(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn vislet_rejects_bad_input() {
        let o = Position::new(0.0, 0.0);
        assert!(matches!(
            vislet_from_angle(o, HeadAngle::new(0.0), 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            vislet_from_angle(Position::new(f64::NAN, 0.0), HeadAngle::new(0.0), 0.5),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            vislet_from_angle(o, HeadAngle::new(0.0), f64::INFINITY),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn angle_from_vislet_examples() {
        let v = |ox, oy, ax, ay| Vislet {
            origin: Position::new(ox, oy),
            anchor: Position::new(ax, ay),
        };
        assert_eq!(angle_from_vislet(&v(0.0, 0.0, 0.5, 0.0)).unwrap().radians(), 0.0);
        assert_abs_diff_eq!(
            angle_from_vislet(&v(0.0, 0.0, 0.0, -0.5)).unwrap().radians(),
            -FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_eq!(angle_from_vislet(&v(2.0, 2.0, 1.5, 2.0)).unwrap().radians(), -PI);
        assert!(matches!(
            angle_from_vislet(&v(1.0, 1.0, 1.0, 1.0)),
            Err(Error::DegenerateVislet)
        ));
    }

    #[test]
    fn movement_angle_examples() {
        let p = Position::new;
        assert_eq!(movement_angle(p(0.0, 0.0), p(1.0, 0.0)).unwrap().radians(), 0.0);
        assert_abs_diff_eq!(
            movement_angle(p(0.0, 0.0), p(0.0, 2.0)).unwrap().radians(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            movement_angle(p(1.0, 1.0), p(0.0, 0.0)).unwrap().radians(),
            (-1.0f64).atan2(-1.0),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            movement_angle(p(1.0, 1.0), p(0.0, 0.0)).unwrap().radians(),
            -3.0 * PI / 4.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            movement_angle(p(1.0, 1.0), p(1.0, 1.0)),
            Err(Error::UndefinedMotion)
        ));
    }

    #[test]
    fn wrap_boundaries() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), -PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(2.0 * PI + 0.1), 0.1, epsilon = 1e-12);
        assert_eq!(HeadAngle::from_degrees(-1.0).degrees_positive().round(), 359.0);
    }

    #[test]
    fn duplicate_tracks_rejected() {
        let s = Sample {
            frame: 0,
            position: Position::new(0.0, 0.0),
            vislet: None,
        };
        let scene = Scene {
            tracks: vec![PedestrianTrack::new(1, vec![s]), PedestrianTrack::new(1, vec![s])],
            ..Scene::default()
        };
        assert!(matches!(scene.validate(), Err(Error::Validation(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wrap_lands_in_range(a in -1e4f64..1e4) {
                let w = wrap_angle(a);
                prop_assert!((-PI..PI).contains(&w));
                prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
            }

            #[test]
            fn vislet_round_trip(
                ox in -50.0f64..50.0,
                oy in -50.0f64..50.0,
                alpha in -PI..PI,
                r in 0.05f64..5.0,
            ) {
                let v = vislet_from_angle(Position::new(ox, oy), HeadAngle::new(alpha), r).unwrap();
                prop_assert!((v.radius() - r).abs() < 1e-9);
                let back = angle_from_vislet(&v).unwrap().radians();
                prop_assert!(angular_distance(back, alpha) < 1e-9);
                let again = vislet_from_angle(v.origin, HeadAngle::new(back), r).unwrap();
                prop_assert!(again.anchor.distance(&v.anchor) < 1e-9);
            }
        }
    }
}
