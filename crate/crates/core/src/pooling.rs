//! View-frustum social pooling.
//!
//! The neighbourhood of a pedestrian is an `N_o × N_o` grid centred on its
//! position and aligned with the world axes. A neighbour contributes its
//! hidden state to the cell containing its position if it lies inside the
//! pedestrian's view frustum: a triangle with apex at the position, axis
//! along the vislet, full aperture `γ` and depth `d`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::types::{Position, Vislet};

/// Default grid side in cells.
pub const DEFAULT_GRID_SIZE: usize = 32;
/// Default cell side in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.2;
/// Default full frustum aperture in degrees.
pub const DEFAULT_APERTURE_DEG: f64 = 40.0;

/// Slack on the angle and depth tests; points on the boundary count as inside.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub apex: Position,
    /// Unit vector along the head direction.
    pub direction: Position,
    /// Full aperture in radians.
    pub aperture: f64,
    pub depth: f64,
}

impl Frustum {
    pub fn new(apex: Position, direction: Position, aperture: f64, depth: f64) -> Result<Self> {
        if !(aperture > 0.0 && aperture < PI) {
            return Err(Error::InvalidInput(format!(
                "frustum aperture must lie in (0, π), got {aperture}"
            )));
        }
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidInput(format!("frustum depth must be positive, got {depth}")));
        }
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() || !apex.is_finite() {
            return Err(Error::InvalidInput("frustum needs a finite apex and non-zero direction".into()));
        }
        Ok(Self {
            apex,
            direction: direction * (1.0 / n),
            aperture,
            depth,
        })
    }

    pub fn from_vislet(vislet: &Vislet, aperture: f64, depth: f64) -> Result<Self> {
        Self::new(vislet.origin, vislet.anchor - vislet.origin, aperture, depth)
    }
}

/// Whether `other` lies inside the frustum (boundary included, apex excluded).
pub fn in_vfoa(f: &Frustum, other: Position) -> bool {
    let v = other - f.apex;
    if v.x == 0.0 && v.y == 0.0 {
        return false;
    }
    let dist = v.norm();
    if dist > f.depth + BOUNDARY_TOLERANCE {
        return false;
    }
    let angle = f.direction.cross(&v).abs().atan2(f.direction.dot(&v));
    angle <= 0.5 * f.aperture + BOUNDARY_TOLERANCE
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub cells_per_side: usize,
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells_per_side: DEFAULT_GRID_SIZE,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// Half the side of the square neighbourhood; also the frustum depth.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.cells_per_side as f64 * self.cell_size
    }

    /// Flat index `m · N_o + n` of the cell holding `other`, with `m` along
    /// world x and `n` along world y, or `None` outside the grid.
    pub fn cell_of(&self, ego: Position, other: Position) -> Option<usize> {
        let half = self.half_extent();
        let m = ((other.x - ego.x + half) / self.cell_size).floor();
        let n = ((other.y - ego.y + half) / self.cell_size).floor();
        let side = self.cells_per_side as f64;
        if m < 0.0 || n < 0.0 || m >= side || n >= side {
            return None;
        }
        Some(m as usize * self.cells_per_side + n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingMode {
    /// Only neighbours inside the view frustum are pooled.
    Frustum,
    /// Every neighbour inside the grid is pooled.
    NoFrustum,
}

/// Sparse `N_o × N_o × D` social tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingGrid {
    pub spec: GridSpec,
    pub hidden: usize,
    /// Occupied cells in ascending index order with their summed states.
    pub cells: Vec<(usize, Vec<f64>)>,
    /// Neighbour indices summed into each entry of `cells`.
    pub contributors: Vec<Vec<usize>>,
}

impl PoolingGrid {
    pub fn empty(spec: GridSpec, hidden: usize) -> Self {
        Self {
            spec,
            hidden,
            cells: Vec::new(),
            contributors: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Dense tensor laid out `[m][n][d]`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.cell_count() * self.hidden];
        for (cell, v) in &self.cells {
            out[cell * self.hidden..(cell + 1) * self.hidden].copy_from_slice(v);
        }
        out
    }
}

/// Pools the hidden states of all pedestrians other than `ego` into the ego's
/// grid. `positions[j]` and `states[j]` describe pedestrian `j`; `frustum` is
/// required in [`PoolingMode::Frustum`].
pub fn pool_hidden_states<S: AsRef<[f64]>>(
    spec: &GridSpec,
    hidden: usize,
    ego: usize,
    positions: &[Position],
    states: &[S],
    mode: PoolingMode,
    frustum: Option<&Frustum>,
) -> Result<PoolingGrid> {
    if positions.len() != states.len() {
        return Err(Error::Dimension {
            what: "pooling states",
            expected: positions.len(),
            got: states.len(),
        });
    }
    if let Some(bad) = states.iter().find(|s| s.as_ref().len() != hidden) {
        return Err(Error::Dimension {
            what: "pooled hidden state",
            expected: hidden,
            got: bad.as_ref().len(),
        });
    }
    if mode == PoolingMode::Frustum && frustum.is_none() {
        return Err(Error::InvalidInput("frustum pooling requires a frustum".into()));
    }
    let origin = positions[ego];
    let mut acc: BTreeMap<usize, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for (j, (&pos, state)) in positions.iter().zip(states).enumerate() {
        if j == ego {
            continue;
        }
        if let (PoolingMode::Frustum, Some(f)) = (mode, frustum) {
            if !in_vfoa(f, pos) {
                continue;
            }
        }
        let Some(cell) = spec.cell_of(origin, pos) else {
            continue;
        };
        let entry = acc.entry(cell).or_insert_with(|| (vec![0.0; hidden], Vec::new()));
        for (a, b) in entry.0.iter_mut().zip(state.as_ref()) {
            *a += b;
        }
        entry.1.push(j);
    }
    let mut grid = PoolingGrid::empty(*spec, hidden);
    for (cell, (v, who)) in acc {
        grid.cells.push((cell, v));
        grid.contributors.push(who);
    }
    Ok(grid)
}
