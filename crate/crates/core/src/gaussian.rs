//! Four-variate Gaussian over `(x, y, a_x, a_y)` with an unconstrained
//! Log-Cholesky parameterization of the covariance.
//!
//! The covariance is `Σ = Uᵀ U` with `U` upper triangular. The ten free
//! entries of `U` are packed row-major:
//!
//! ```text
//! slot:  0 1 2 3      U = | e^θ0  θ1    θ2    θ3   |
//!          4 5 6          |       e^θ4  θ5    θ6   |
//!            7 8          |             e^θ7  θ8   |
//!              9          |                   e^θ9 |
//! ```
//!
//! Diagonal slots (0, 4, 7, 9) hold the logarithm of the diagonal of `U`, so
//! every finite parameter vector yields a strictly positive-definite `Σ`.
//!
//! [`Bivariate`] is the 2-D variances-plus-correlation head used by the
//! block-diagonal and vanilla model variants.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const DIM: usize = 4;
pub const THETA_LEN: usize = 10;
/// Means followed by the packed θ entries.
pub const PARAM_LEN: usize = DIM + THETA_LEN;
/// Positions of the log-diagonal entries inside `theta`.
pub const DIAG_SLOTS: [usize; DIM] = [0, 4, 7, 9];

/// Largest log-diagonal magnitude accepted before `exp` over- or underflows.
pub const MAX_LOG_DIAG: f64 = 700.0;

pub type Mat4 = [[f64; DIM]; DIM];

/// Index into `theta` of the upper-triangular entry `(row, col)`, `row <= col`.
pub const fn theta_slot(row: usize, col: usize) -> usize {
    // rows start at 0, 4, 7, 9
    row * DIM - row * row.saturating_sub(1) / 2 + (col - row)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogCholParams {
    pub mu: [f64; DIM],
    pub theta: [f64; THETA_LEN],
}

impl Default for LogCholParams {
    fn default() -> Self {
        Self {
            mu: [0.0; DIM],
            theta: [0.0; THETA_LEN],
        }
    }
}

impl LogCholParams {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != PARAM_LEN {
            return Err(Error::Dimension {
                what: "log-cholesky parameter vector",
                expected: PARAM_LEN,
                got: values.len(),
            });
        }
        let mut p = Self::default();
        p.mu.copy_from_slice(&values[..DIM]);
        p.theta.copy_from_slice(&values[DIM..]);
        Ok(p)
    }

    pub fn to_array(&self) -> [f64; PARAM_LEN] {
        let mut out = [0.0; PARAM_LEN];
        out[..DIM].copy_from_slice(&self.mu);
        out[DIM..].copy_from_slice(&self.theta);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.theta.iter()).all(|v| v.is_finite())
    }

    /// The upper-triangular factor `U` with `Σ = UᵀU`.
    pub fn upper_factor(&self) -> Result<Mat4> {
        if !self.is_finite() {
            return Err(Error::InvalidInput("non-finite log-cholesky parameters".into()));
        }
        let mut u = [[0.0; DIM]; DIM];
        for row in 0..DIM {
            for col in row..DIM {
                let v = self.theta[theta_slot(row, col)];
                u[row][col] = if row == col {
                    if v.abs() > MAX_LOG_DIAG {
                        return Err(Error::ParameterOverflow { value: v });
                    }
                    v.exp()
                } else {
                    v
                };
            }
        }
        Ok(u)
    }

    /// Rescales each coordinate: the distribution of `S·X + shift` with
    /// `S = diag(scale)`.
    pub fn affine(&self, scale: [f64; DIM], shift: [f64; DIM]) -> LogCholParams {
        let mut out = *self;
        for k in 0..DIM {
            out.mu[k] = self.mu[k] * scale[k] + shift[k];
        }
        for row in 0..DIM {
            for col in row..DIM {
                let slot = theta_slot(row, col);
                out.theta[slot] = if row == col {
                    self.theta[slot] + scale[col].ln()
                } else {
                    self.theta[slot] * scale[col]
                };
            }
        }
        out
    }

    /// Draws `μ + Uᵀ z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; DIM]> {
        let u = self.upper_factor()?;
        Ok(sample_with_factor(&self.mu, &u, rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian4 {
    pub mu: [f64; DIM],
    pub sigma: Mat4,
}

impl Gaussian4 {
    /// Upper Cholesky factor of `sigma`, or `None` if a pivot is not positive.
    pub fn cholesky_upper(&self) -> Option<Mat4> {
        cholesky_upper(&self.sigma)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..DIM).all(|i| (0..DIM).all(|j| (self.sigma[i][j] - self.sigma[j][i]).abs() <= tol))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky_upper().is_some()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; DIM]> {
        let u = self
            .cholesky_upper()
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
        Ok(sample_with_factor(&self.mu, &u, rng))
    }
}

fn sample_with_factor<R: Rng + ?Sized>(mu: &[f64; DIM], u: &Mat4, rng: &mut R) -> [f64; DIM] {
    let z: [f64; DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let mut out = *mu;
    // (Uᵀ z)_i = Σ_{k <= i} U[k][i] z_k
    for (i, o) in out.iter_mut().enumerate() {
        for (k, zk) in z.iter().enumerate().take(i + 1) {
            *o += u[k][i] * zk;
        }
    }
    out
}

/// Upper-triangular `U` with `UᵀU = sigma` and positive diagonal.
pub fn cholesky_upper(sigma: &Mat4) -> Option<Mat4> {
    // Row k of U is column k of the lower factor.
    let mut u = [[0.0; DIM]; DIM];
    for k in 0..DIM {
        let mut pivot = sigma[k][k];
        for i in 0..k {
            pivot -= u[i][k] * u[i][k];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let d = pivot.sqrt();
        u[k][k] = d;
        for j in k + 1..DIM {
            let mut v = sigma[k][j];
            for i in 0..k {
                v -= u[i][k] * u[i][j];
            }
            u[k][j] = v / d;
        }
    }
    Some(u)
}

/// Builds `Σ = UᵀU` from the packed parameters. No projection or repair is
/// applied; positive definiteness follows from the positive diagonal of `U`.
pub fn reconstruct(params: &LogCholParams) -> Result<Gaussian4> {
    let u = params.upper_factor()?;
    let mut sigma = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in i..DIM {
            let mut acc = 0.0;
            for k in 0..=i.min(j) {
                acc += u[k][i] * u[k][j];
            }
            sigma[i][j] = acc;
            sigma[j][i] = acc;
        }
    }
    Ok(Gaussian4 {
        mu: params.mu,
        sigma,
    })
}

/// Inverse of [`reconstruct`] for positive-definite covariances.
pub fn extract(g: &Gaussian4) -> Result<LogCholParams> {
    let u = g
        .cholesky_upper()
        .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
    let mut theta = [0.0; THETA_LEN];
    for row in 0..DIM {
        for col in row..DIM {
            theta[theta_slot(row, col)] = if row == col { u[row][col].ln() } else { u[row][col] };
        }
    }
    Ok(LogCholParams { mu: g.mu, theta })
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

struct Solved {
    u: Mat4,
    /// `z = U⁻ᵀ r`
    z: [f64; DIM],
    log_det_half: f64,
}

fn solve(params: &LogCholParams, target: &[f64; DIM]) -> Result<Solved> {
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite target".into()));
    }
    let u = params.upper_factor()?;
    let mut z = [0.0; DIM];
    // Uᵀ is lower triangular: forward substitution.
    for i in 0..DIM {
        let mut v = target[i] - params.mu[i];
        for k in 0..i {
            v -= u[k][i] * z[k];
        }
        z[i] = v / u[i][i];
    }
    let log_det_half = DIAG_SLOTS.iter().map(|&s| params.theta[s]).sum();
    Ok(Solved { u, z, log_det_half })
}

/// Negative log-density `-log N(target; μ, UᵀU)`.
pub fn nll(params: &LogCholParams, target: &[f64; DIM]) -> Result<f64> {
    let s = solve(params, target)?;
    let quad: f64 = s.z.iter().map(|v| v * v).sum();
    Ok(0.5 * quad + s.log_det_half + 0.5 * DIM as f64 * LOG_2PI)
}

pub fn nll_grad(params: &LogCholParams, target: &[f64; DIM]) -> Result<[f64; PARAM_LEN]> {
    nll_and_grad(params, target).map(|(_, g)| g)
}

/// Loss and its gradient with respect to `[μ, θ]`.
pub fn nll_and_grad(params: &LogCholParams, target: &[f64; DIM]) -> Result<(f64, [f64; PARAM_LEN])> {
    let Solved { u, z, log_det_half } = solve(params, target)?;
    // w = U⁻¹ z = Σ⁻¹ r
    let mut w = [0.0; DIM];
    for i in (0..DIM).rev() {
        let mut v = z[i];
        for k in i + 1..DIM {
            v -= u[i][k] * w[k];
        }
        w[i] = v / u[i][i];
    }
    let mut grad = [0.0; PARAM_LEN];
    for i in 0..DIM {
        grad[i] = -w[i];
    }
    for row in 0..DIM {
        for col in row..DIM {
            let d_u = -z[row] * w[col];
            grad[DIM + theta_slot(row, col)] = if row == col {
                // chain rule through U_kk = exp(θ), plus d log|U| / dθ = 1
                d_u * u[row][row] + 1.0
            } else {
                d_u
            };
        }
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok((0.5 * quad + log_det_half + 0.5 * DIM as f64 * LOG_2PI, grad))
}

/// Bivariate Gaussian parameterized by means, log standard deviations and an
/// unconstrained correlation `ρ̂` with `ρ = tanh ρ̂`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bivariate {
    pub mu: [f64; 2],
    pub log_sigma: [f64; 2],
    pub rho_raw: f64,
}

pub const BIVARIATE_LEN: usize = 5;

impl Bivariate {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != BIVARIATE_LEN {
            return Err(Error::Dimension {
                what: "bivariate parameter vector",
                expected: BIVARIATE_LEN,
                got: values.len(),
            });
        }
        Ok(Self {
            mu: [values[0], values[1]],
            log_sigma: [values[2], values[3]],
            rho_raw: values[4],
        })
    }

    pub fn to_array(&self) -> [f64; BIVARIATE_LEN] {
        [
            self.mu[0],
            self.mu[1],
            self.log_sigma[0],
            self.log_sigma[1],
            self.rho_raw,
        ]
    }

    pub fn rho(&self) -> f64 {
        self.rho_raw.tanh()
    }

    pub fn sigma(&self) -> Result<[[f64; 2]; 2]> {
        self.check()?;
        let s0 = self.log_sigma[0].exp();
        let s1 = self.log_sigma[1].exp();
        let c = self.rho() * s0 * s1;
        Ok([[s0 * s0, c], [c, s1 * s1]])
    }

    pub fn affine(&self, scale: f64, shift: [f64; 2]) -> Bivariate {
        Bivariate {
            mu: [self.mu[0] * scale + shift[0], self.mu[1] * scale + shift[1]],
            log_sigma: [self.log_sigma[0] + scale.ln(), self.log_sigma[1] + scale.ln()],
            rho_raw: self.rho_raw,
        }
    }

    fn check(&self) -> Result<()> {
        let all = self.to_array();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite bivariate parameters".into()));
        }
        for &v in &self.log_sigma {
            if v.abs() > MAX_LOG_DIAG {
                return Err(Error::ParameterOverflow { value: v });
            }
        }
        Ok(())
    }

    /// `log(1 - ρ²)` computed from `ρ̂` without cancellation.
    fn log_one_minus_rho_sq(&self) -> f64 {
        // 1 - tanh²(x) = sech²(x); log cosh x = |x| + ln(1 + e^{-2|x|}) - ln 2
        let a = self.rho_raw.abs();
        -2.0 * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
    }

    pub fn nll(&self, target: &[f64; 2]) -> Result<f64> {
        self.nll_and_grad(target).map(|(v, _)| v)
    }

    pub fn nll_and_grad(&self, target: &[f64; 2]) -> Result<(f64, [f64; BIVARIATE_LEN])> {
        self.check()?;
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite target".into()));
        }
        let sd = [self.log_sigma[0].exp(), self.log_sigma[1].exp()];
        let z = [
            (target[0] - self.mu[0]) / sd[0],
            (target[1] - self.mu[1]) / sd[1],
        ];
        let rho = self.rho();
        let log_omr = self.log_one_minus_rho_sq();
        let k = (-log_omr).exp();
        let q = z[0] * z[0] + z[1] * z[1] - 2.0 * rho * z[0] * z[1];
        let value = (2.0 * PI).ln() + self.log_sigma[0] + self.log_sigma[1] + 0.5 * log_omr + 0.5 * k * q;

        let dz0 = k * (z[0] - rho * z[1]);
        let dz1 = k * (z[1] - rho * z[0]);
        let d_rho = -rho * k + rho * k * k * q - k * z[0] * z[1];
        let grad = [
            -dz0 / sd[0],
            -dz1 / sd[1],
            1.0 - dz0 * z[0],
            1.0 - dz1 * z[1],
            d_rho * (1.0 - rho * rho),
        ];
        Ok((value, grad))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2]> {
        self.check()?;
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let rho = self.rho();
        let s0 = self.log_sigma[0].exp();
        let s1 = self.log_sigma[1].exp();
        let tail = (0.5 * self.log_one_minus_rho_sq()).exp();
        Ok([
            self.mu[0] + s0 * z0,
            self.mu[1] + s1 * (rho * z0 + tail * z1),
        ])
    }
}
