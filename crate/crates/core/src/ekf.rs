//! Conventional error-state EKF used as the comparison baseline.
//!
//! The mean is propagated exactly like the invariant filter. The error state
//! is `[dtheta, dv, dp, dbg, dba]` with a body-frame multiplicative attitude
//! error `R = R_hat exp(dtheta)` and additive errors elsewhere, so the
//! Jacobians depend on the current estimate.

use log::warn;
use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::inekf::{ZuptConstants, MAX_CONDITION};
use crate::lie::{skew, Mat3, Rot3};
use crate::linalg::{condition_number_sym3, expm, symmetrize, Mat15};
use crate::runner::{NavFilter, REORTHONORMALIZE_EVERY};
use crate::state::{propagate_nav, FilterBelief, ImuSample, NoiseConfig};

/// Same content as [`FilterBelief`]; the covariance is over the EKF error state.
pub type EkfBelief = FilterBelief;

pub type Mat15x12 = SMatrix<f64, 15, 12>;

/// Continuous-time error Jacobian `F_c`.
pub fn error_jacobian(belief: &EkfBelief, sample: &ImuSample) -> Mat15 {
    let r = belief.nav.rot.matrix();
    let omega = sample.gyro - belief.bias.gyro;
    let f = sample.accel - belief.bias.accel;
    let mut fc = Mat15::zeros();
    fc.fixed_view_mut::<3, 3>(0, 0).copy_from(&-skew(&omega));
    fc.fixed_view_mut::<3, 3>(0, 9).copy_from(&-Mat3::identity());
    fc.fixed_view_mut::<3, 3>(3, 0).copy_from(&-(r * skew(&f)));
    fc.fixed_view_mut::<3, 3>(3, 12).copy_from(&-r);
    fc.fixed_view_mut::<3, 3>(6, 3).copy_from(&Mat3::identity());
    fc
}

/// Noise input matrix for `[w_g, w_a, w_bg, w_ba]`.
pub fn noise_input(belief: &EkfBelief) -> Mat15x12 {
    let mut g = Mat15x12::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&-Mat3::identity());
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&-belief.nav.rot.matrix());
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&Mat3::identity());
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&Mat3::identity());
    g
}

/// `G diag(sigma^2) G^T dt`.
pub fn discrete_noise(belief: &EkfBelief, cfg: &NoiseConfig, dt: f64) -> Mat15 {
    let mut d = nalgebra::SVector::<f64, 12>::zeros();
    for i in 0..3 {
        d[i] = cfg.sigma_g.powi(2);
        d[3 + i] = cfg.sigma_a.powi(2);
        d[6 + i] = cfg.sigma_bg.powi(2);
        d[9 + i] = cfg.sigma_ba.powi(2);
    }
    let g = noise_input(belief);
    g * SMatrix::<f64, 12, 12>::from_diagonal(&d) * g.transpose() * dt
}

pub fn ekf_predict(belief: &EkfBelief, sample: &ImuSample, dt: f64, cfg: &NoiseConfig) -> Result<EkfBelief> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonFinite("time step"));
    }
    if !sample.is_finite() || !belief.is_finite() {
        return Err(Error::NonFinite("predict input"));
    }
    let f = expm(&(error_jacobian(belief, sample) * dt));
    let cov = f * belief.cov * f.transpose() + discrete_noise(belief, cfg, dt);
    Ok(EkfBelief {
        nav: propagate_nav(&belief.nav, &belief.bias, sample, dt, &cfg.gravity),
        bias: belief.bias,
        cov: symmetrize(&cov),
        t: belief.t + dt,
    })
}

/// Zero-velocity update with residual `0 - v_hat` and noise `M` in the world frame.
pub fn ekf_zupt_update(belief: &EkfBelief, cfg: &NoiseConfig) -> Result<EkfBelief> {
    let h = ZuptConstants::new().h;
    let s = symmetrize(&(h * belief.cov * h.transpose() + cfg.slip_cov));
    let condition = condition_number_sym3(&s);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateUpdate { condition });
    }
    let s_inv = s.try_inverse().ok_or(Error::DegenerateUpdate { condition })?;
    let k = belief.cov * h.transpose() * s_inv;
    let dx = k * (-belief.nav.vel);

    let mut out = *belief;
    out.nav.rot = belief.nav.rot * Rot3::exp(&dx.fixed_rows::<3>(0).into_owned());
    out.nav.vel += dx.fixed_rows::<3>(3);
    out.nav.pos += dx.fixed_rows::<3>(6);
    out.bias.gyro += dx.fixed_rows::<3>(9);
    out.bias.accel += dx.fixed_rows::<3>(12);
    out.cov = symmetrize(&((Mat15::identity() - k * h) * belief.cov));
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ErrorStateEkf {
    belief: EkfBelief,
    cfg: NoiseConfig,
    steps: usize,
}

impl ErrorStateEkf {
    pub fn new(belief: EkfBelief, cfg: NoiseConfig) -> Self {
        ErrorStateEkf { belief, cfg, steps: 0 }
    }
}

impl NavFilter for ErrorStateEkf {
    fn predict(&mut self, sample: &ImuSample, dt: f64) -> Result<()> {
        self.belief = ekf_predict(&self.belief, sample, dt, &self.cfg)?;
        self.steps += 1;
        if self.steps % REORTHONORMALIZE_EVERY == 0 {
            self.belief.nav.rot = self.belief.nav.rot.reorthonormalize();
        }
        Ok(())
    }

    fn zupt(&mut self) -> Result<()> {
        match ekf_zupt_update(&self.belief, &self.cfg) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inekf::{self, build_a};
    use crate::lie::{Vec3, SE23};
    use crate::linalg::{asymmetry, min_eigenvalue, Vec15};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rand_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn gauss3(rng: &mut impl Rng) -> Vec3 {
        Vec3::from_fn(|_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn attitude_block_is_identity_without_rotation() {
        let b = EkfBelief::initial(&Vec15::repeat(1e-3), 0.0).unwrap();
        let s = ImuSample::new(0.0, Vec3::zeros(), Vec3::zeros());
        let f = expm(&(error_jacobian(&b, &s) * 0.01));
        assert_eq!(f.fixed_view::<3, 3>(0, 0).into_owned(), Mat3::identity());
    }

    #[test]
    fn jacobian_depends_on_estimate_unlike_invariant_core() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        let s = ImuSample::new(0.0, Vec3::new(0.1, 0.0, 0.3), Vec3::new(0.5, 0.0, 9.81));
        let mut b1 = EkfBelief::initial(&Vec15::repeat(1e-3), 0.0).unwrap();
        let mut b2 = b1;
        b1.nav.rot = Rot3::exp(&Vec3::new(0.2, 0.0, 0.0));
        b2.nav.rot = Rot3::exp(&Vec3::new(0.0, -0.4, 1.0));
        assert_ne!(error_jacobian(&b1, &s), error_jacobian(&b2, &s));
        assert_eq!(
            build_a(&b1, &g).fixed_view::<9, 9>(0, 0).into_owned(),
            build_a(&b2, &g).fixed_view::<9, 9>(0, 0).into_owned()
        );
    }

    #[test]
    fn mean_propagation_matches_invariant_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NoiseConfig::default();
        for _ in 0..100 {
            let mut b = EkfBelief::initial(&Vec15::repeat(1e-3), 0.0).unwrap();
            b.nav = SE23::new(Rot3::exp(&rand_vec(&mut rng, 2.0)), rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 10.0));
            b.bias.gyro = rand_vec(&mut rng, 0.1);
            let s = ImuSample::new(0.0, rand_vec(&mut rng, 3.0), rand_vec(&mut rng, 15.0));
            let e = ekf_predict(&b, &s, 0.01, &cfg).unwrap();
            let i = inekf::predict(&b, &s, 0.01, &cfg).unwrap();
            assert_eq!(e.nav, i.nav);
            assert_eq!(e.bias, i.bias);
        }
    }

    /// Samples initial errors and noise, pushes true and estimated states
    /// through one step, and compares the empirical velocity-error covariance
    /// with the predicted block.
    #[test]
    fn monte_carlo_velocity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dt = 0.01;
        let mut cfg = NoiseConfig::default();
        cfg.sigma_a = 0.1;

        let mut b = EkfBelief::initial(&Vec15::zeros(), 0.0).unwrap();
        b.nav = SE23::new(Rot3::exp(&Vec3::new(0.1, -0.2, 0.7)), Vec3::new(0.5, 0.2, 0.0), Vec3::new(1.0, 2.0, 0.0));
        b.bias.gyro = Vec3::new(0.01, 0.0, -0.01);
        b.bias.accel = Vec3::new(0.05, -0.02, 0.0);
        let diag = Vec15::from_row_slice(&[
            1e-2, 1e-2, 1e-2, 1e-5, 1e-5, 1e-5, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2,
        ]);
        b.cov = Mat15::from_diagonal(&diag);
        let sample = ImuSample::new(0.0, Vec3::new(0.3, -0.1, 0.5), Vec3::new(2.0, -1.0, 9.5));
        let predicted = ekf_predict(&b, &sample, dt, &cfg).unwrap();
        let chol = b.cov.cholesky().unwrap().l();

        let n = 10_000;
        let mut errs = Vec::with_capacity(n);
        for _ in 0..n {
            let z = Vec15::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let dx = chol * z;
            let truth_rot = b.nav.rot * Rot3::exp(&dx.fixed_rows::<3>(0).into_owned());
            let truth_vel = b.nav.vel + dx.fixed_rows::<3>(3);
            let ba = b.bias.accel + dx.fixed_rows::<3>(12);
            // Continuous white noise of density sigma, held over one step.
            let wa = gauss3(&mut rng) * (cfg.sigma_a / dt.sqrt());
            let accel = sample.accel - ba - wa;
            let v_next = truth_vel + (truth_rot * accel + cfg.gravity) * dt;
            errs.push(v_next - predicted.nav.vel);
        }
        let mean = errs.iter().fold(Vec3::zeros(), |a, e| a + e) / n as f64;
        let emp = errs.iter().fold(Mat3::zeros(), |a, e| a + (e - mean) * (e - mean).transpose()) / (n - 1) as f64;
        let model = predicted.cov.fixed_view::<3, 3>(3, 3).into_owned();
        for i in 0..3 {
            let rel = (emp[(i, i)] - model[(i, i)]).abs() / model[(i, i)];
            assert!(rel < 0.05, "axis {i}: empirical {} model {}", emp[(i, i)], model[(i, i)]);
        }
    }

    #[test]
    fn zupt_examples() {
        let mut cfg = NoiseConfig::default();
        let b = EkfBelief::initial(&Vec15::repeat(1e-3), 0.0).unwrap();
        let out = ekf_zupt_update(&b, &cfg).unwrap();
        assert_eq!(out.nav, b.nav);
        assert!(out.cov[(3, 3)] < b.cov[(3, 3)]);

        let var_v = 4e-3;
        let m = 1e-3;
        cfg.slip_cov = Mat3::identity() * m;
        let mut b = EkfBelief::initial(&Vec15::repeat(var_v), 0.0).unwrap();
        b.nav.vel = Vec3::new(0.1, 0.0, 0.0);
        let out = ekf_zupt_update(&b, &cfg).unwrap();
        let dv = -0.1 * var_v / (var_v + m);
        assert_relative_eq!(out.nav.vel.x - 0.1, dv, epsilon = 1e-15);
        assert_eq!(out.nav.vel.y, 0.0);
    }

    #[test]
    fn matches_invariant_update_in_symmetric_case() {
        let cfg = NoiseConfig::default();
        let mut b = EkfBelief::initial(&Vec15::repeat(2e-3), 0.0).unwrap();
        b.nav.vel = Vec3::new(0.01, -0.005, 0.002);
        let e = ekf_zupt_update(&b, &cfg).unwrap();
        let i = inekf::zupt_update(&b, &cfg).unwrap();
        assert!((e.nav.to_matrix() - i.nav.to_matrix()).norm() < 1e-6);
        assert!((e.cov - i.cov).norm() < 1e-6);
    }

    #[test]
    fn covariance_health_over_many_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut f = ErrorStateEkf::new(EkfBelief::initial(&Vec15::repeat(1e-4), 0.0).unwrap(), NoiseConfig::default());
        for k in 0..20_000 {
            let s = ImuSample::new(0.0, rand_vec(&mut rng, 3.0), rand_vec(&mut rng, 15.0));
            f.predict(&s, 0.01).unwrap();
            if k % 3 == 0 {
                f.zupt().unwrap();
            }
        }
        let b = f.belief();
        assert!(asymmetry(&b.cov) < 1e-9);
        assert!(min_eigenvalue(&b.cov) > -1e-8);
        assert!(b.nav.rot.orthonormality_error() < 1e-6);
    }
}
