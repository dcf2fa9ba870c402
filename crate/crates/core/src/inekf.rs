//! Right-invariant EKF on SE2(3) with Euclidean bias augmentation.
//!
//! The error state is `[xi; zeta]` where `exp(xi) = X_hat X^{-1}` and
//! `zeta = b_hat - b`. Without bias terms the error dynamics are linear and
//! independent of the estimate, which is what [`build_a`] exposes in its
//! top-left 9x9 block.

use log::warn;
use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::lie::{skew, Mat3, Mat5, Rot3, Tangent9, Vec3, SE23};
use crate::linalg::{condition_number_sym3, expm, symmetrize, Mat15};
use crate::state::{propagate_nav, FilterBelief, ImuSample, NoiseConfig};

/// Innovation covariances with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative deviation of the mean accelerometer norm from `|g|` tolerated at start-up.
pub const STATIC_TOLERANCE: f64 = 0.2;

pub type Mat3x15 = SMatrix<f64, 3, 15>;
pub type Mat3x5 = SMatrix<f64, 3, 5>;
pub type Vec5 = SVector<f64, 5>;

/// Fixed matrices of the zero-velocity pseudo-measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZuptConstants {
    /// Selects the velocity column: `[0, 0, 0, -1, 0]`.
    pub b: Vec5,
    /// `[0 I 0 0 0]`, picks `xi_v` out of the 15-dim error.
    pub h: Mat3x15,
    /// `[I_3 0_{3x2}]`, keeps the first three rows of a 5-vector.
    pub pi: Mat3x5,
}

impl ZuptConstants {
    pub fn new() -> Self {
        let mut h = Mat3x15::zeros();
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        let mut pi = Mat3x5::zeros();
        pi.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        ZuptConstants {
            b: Vec5::new(0.0, 0.0, 0.0, -1.0, 0.0),
            h,
            pi,
        }
    }
}

impl Default for ZuptConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// Matrices used by one covariance prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessMatrices {
    pub a: Mat15,
    pub phi: Mat15,
    pub q: Mat15,
    pub ad_ext: Mat15,
}

/// Continuous dynamics `f(X; omega, a)` of the 5x5 embedding, bias-free.
pub fn dynamics(x: &SE23, omega: &Vec3, accel: &Vec3, gravity: &Vec3) -> Mat5 {
    let mut m = Mat5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(x.rot.matrix() * skew(omega)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(x.rot * *accel + gravity));
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&x.vel);
    m
}

/// Mean attitude from a static window: roll and pitch from the averaged
/// specific force, yaw fixed at zero.
pub fn init_from_static(samples: &[ImuSample], gravity: &Vec3) -> Result<Rot3> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { count: 0 });
    }
    let mean = samples.iter().fold(Vec3::zeros(), |acc, s| acc + s.accel) / samples.len() as f64;
    let g = gravity.norm();
    let magnitude = mean.norm();
    if !magnitude.is_finite() || (magnitude - g).abs() > STATIC_TOLERANCE * g {
        return Err(Error::NotStatic { magnitude, expected: g });
    }
    let roll = mean.y.atan2(mean.z);
    let pitch = -(mean.x / g).clamp(-1.0, 1.0).asin();
    Ok(Rot3::from_roll_pitch(roll, pitch))
}

/// Linearized error dynamics `A_t` including the bias columns.
pub fn build_a(belief: &FilterBelief, gravity: &Vec3) -> Mat15 {
    let r = belief.nav.rot.matrix();
    let mut a = Mat15::zeros();
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(gravity));
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(0, 9).copy_from(&-r);
    a.fixed_view_mut::<3, 3>(3, 9).copy_from(&-(skew(&belief.nav.vel) * r));
    a.fixed_view_mut::<3, 3>(6, 9).copy_from(&-(skew(&belief.nav.pos) * r));
    a.fixed_view_mut::<3, 3>(3, 12).copy_from(&-r);
    a
}

/// `Ad_X` in the top-left 9x9 block and identity on the bias block.
pub fn extended_adjoint(nav: &SE23) -> Mat15 {
    let mut ad = Mat15::identity();
    ad.fixed_view_mut::<9, 9>(0, 0).copy_from(&nav.adjoint());
    ad
}

/// `(block_diag(sigma_g I, sigma_a I, 0, sigma_bg I, sigma_ba I) dt)^2`.
pub fn process_noise(cfg: &NoiseConfig, dt: f64) -> Mat15 {
    let mut d = nalgebra::SVector::<f64, 15>::zeros();
    for i in 0..3 {
        d[i] = cfg.sigma_g * dt;
        d[3 + i] = cfg.sigma_a * dt;
        d[9 + i] = cfg.sigma_bg * dt;
        d[12 + i] = cfg.sigma_ba * dt;
    }
    Mat15::from_diagonal(&d.component_mul(&d))
}

pub fn process_matrices(belief: &FilterBelief, dt: f64, cfg: &NoiseConfig) -> ProcessMatrices {
    let a = build_a(belief, &cfg.gravity);
    ProcessMatrices {
        a,
        phi: expm(&(a * dt)),
        q: process_noise(cfg, dt),
        ad_ext: extended_adjoint(&belief.nav),
    }
}

/// IMU-driven prediction of the mean and covariance over `dt`.
pub fn predict(belief: &FilterBelief, sample: &ImuSample, dt: f64, cfg: &NoiseConfig) -> Result<FilterBelief> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonFinite("time step"));
    }
    if !sample.is_finite() || !belief.is_finite() {
        return Err(Error::NonFinite("predict input"));
    }
    let m = process_matrices(belief, dt, cfg);
    let noise = m.ad_ext * m.q * m.ad_ext.transpose();
    let cov = m.phi * (belief.cov + noise * dt) * m.phi.transpose();
    Ok(FilterBelief {
        nav: propagate_nav(&belief.nav, &belief.bias, sample, dt, &cfg.gravity),
        bias: belief.bias,
        cov: symmetrize(&cov),
        t: belief.t + dt,
    })
}

/// Outcome of the gain computation, kept separate so tests can inspect it.
#[derive(Clone, Copy, Debug)]
pub struct ZuptInnovation {
    /// `Pi V`, equal to `-v_hat` for the zero-velocity pseudo-measurement.
    pub pi_v: Vec3,
    pub s: Mat3,
    pub gain: SMatrix<f64, 15, 3>,
}

/// Right-invariant innovation, its covariance and the Kalman gain.
pub fn zupt_innovation(belief: &FilterBelief, cfg: &NoiseConfig) -> Result<ZuptInnovation> {
    let c = ZuptConstants::new();
    let x = &belief.nav;
    // z = X^{-1} B evaluated at v = 0 is B itself.
    let z = c.b;
    let z_hat = x.inverse().to_matrix() * c.b;
    let v = x.to_matrix() * (z - z_hat);
    let pi_v = c.pi * v;

    let r = x.rot.matrix();
    let s = symmetrize(&(c.h * belief.cov * c.h.transpose() + r * cfg.slip_cov * r.transpose()));
    let condition = condition_number_sym3(&s);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateUpdate { condition });
    }
    let s_inv = s.try_inverse().ok_or(Error::DegenerateUpdate { condition })?;
    let gain = belief.cov * c.h.transpose() * s_inv;
    Ok(ZuptInnovation { pi_v, s, gain })
}

/// Zero-velocity update: group correction of the pose, additive bias correction.
pub fn zupt_update(belief: &FilterBelief, cfg: &NoiseConfig) -> Result<FilterBelief> {
    let inn = zupt_innovation(belief, cfg)?;
    let dx = inn.gain * inn.pi_v;
    let xi = Tangent9::new(
        dx.fixed_rows::<3>(0).into_owned(),
        dx.fixed_rows::<3>(3).into_owned(),
        dx.fixed_rows::<3>(6).into_owned(),
    );
    let mut bias = belief.bias;
    bias.gyro += dx.fixed_rows::<3>(9);
    bias.accel += dx.fixed_rows::<3>(12);

    let h = ZuptConstants::new().h;
    let cov = (Mat15::identity() - inn.gain * h) * belief.cov;
    Ok(FilterBelief {
        nav: SE23::exp(&xi).compose(&belief.nav),
        bias,
        cov: symmetrize(&cov),
        t: belief.t,
    })
}

/// Stateful wrapper that re-orthonormalizes the attitude periodically.
#[derive(Clone, Debug)]
pub struct InvariantEkf {
    belief: FilterBelief,
    cfg: NoiseConfig,
    reorth_every: usize,
    steps: usize,
}

impl InvariantEkf {
    pub fn new(belief: FilterBelief, cfg: NoiseConfig) -> Self {
        InvariantEkf {
            belief,
            cfg,
            reorth_every: crate::runner::REORTHONORMALIZE_EVERY,
            steps: 0,
        }
    }

    pub fn with_reorthonormalize_every(mut self, steps: usize) -> Self {
        self.reorth_every = steps;
        self
    }
}

impl crate::runner::NavFilter for InvariantEkf {
    fn predict(&mut self, sample: &ImuSample, dt: f64) -> Result<()> {
        self.belief = predict(&self.belief, sample, dt, &self.cfg)?;
        self.steps += 1;
        if self.reorth_every > 0 && self.steps % self.reorth_every == 0 {
            self.belief.nav.rot = self.belief.nav.rot.reorthonormalize();
        }
        Ok(())
    }

    fn zupt(&mut self) -> Result<()> {
        match zupt_update(&self.belief, &self.cfg) {
            Ok(b) => {
                self.belief = b;
                Ok(())
            }
            Err(e @ Error::DegenerateUpdate { .. }) => {
                warn!("t = {:.3}: skipping zero-velocity update: {e}", self.belief.t);
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    fn belief(&self) -> &FilterBelief {
        &self.belief
    }

    fn belief_mut(&mut self) -> &mut FilterBelief {
        &mut self.belief
    }
}
