//! Trajectory files, synthetic scenes and head-pose corruption.

mod format;
mod synthetic;

pub use format::{
    parse_trajectories, parse_trajectory_file, write_trajectories, write_trajectory_file, COLUMNS_POSITION_ONLY,
    COLUMNS_WITH_HEAD, FORMAT_MAGIC,
};
pub use synthetic::{generate_synthetic, Scenario, SyntheticSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{angle_from_vislet, vislet_from_angle, HeadAngle, Scene};

/// Adds `N(0, σ²)` noise (degrees) to every head angle and rebuilds the
/// vislets at the scene radius. Positions are left untouched.
pub fn inject_head_noise(scene: &Scene, sigma_deg: f64, seed: u64) -> Result<Scene> {
    if !(sigma_deg >= 0.0) || !sigma_deg.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma must be non-negative, got {sigma_deg}")));
    }
    if sigma_deg == 0.0 {
        return Ok(scene.clone());
    }
    let normal = Normal::new(0.0, sigma_deg.to_radians()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    for track in &mut out.tracks {
        for s in &mut track.samples {
            if let Some(v) = &s.vislet {
                let alpha = angle_from_vislet(v)?.radians() + normal.sample(&mut rng);
                s.vislet = Some(vislet_from_angle(s.position, HeadAngle::new(alpha), scene.vislet_radius)?);
            }
        }
    }
    Ok(out)
}
