//! Value types shared by the filters, the simulator and file I/O.

use crate::error::{Error, Result};
use crate::lie::{Mat3, Rot3, Vec3, SE23};
use crate::linalg::{asymmetry, min_eigenvalue, symmetrize, Mat15, Vec15};

/// Sanity bound on any gyro or accelerometer component.
pub const SAMPLE_LIMIT: f64 = 2000.0;

/// One IMU reading: body-frame angular rate (rad/s) and specific force (m/s^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        ImuSample { t, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuBias {
    pub fn new(gyro: Vec3, accel: Vec3) -> Self {
        ImuBias { gyro, accel }
    }
}

/// Navigation state, IMU bias and the 15x15 error covariance.
///
/// Covariance blocks are ordered attitude, velocity, position, gyro bias,
/// accel bias. The meaning of the attitude/velocity/position blocks depends on
/// the filter that owns the belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterBelief {
    pub nav: SE23,
    pub bias: ImuBias,
    pub cov: Mat15,
    pub t: f64,
}

impl FilterBelief {
    /// Identity pose, zero bias and a diagonal covariance.
    pub fn initial(cov0_diag: &Vec15, t0: f64) -> Result<Self> {
        if let Some((index, &value)) = cov0_diag.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeCovariance { index, value });
        }
        Ok(FilterBelief {
            nav: SE23::identity(),
            bias: ImuBias::default(),
            cov: Mat15::from_diagonal(cov0_diag),
            t: t0,
        })
    }

    pub fn symmetrize(&mut self) {
        self.cov = symmetrize(&self.cov);
    }

    pub fn is_finite(&self) -> bool {
        self.nav.is_finite()
            && self.cov.iter().all(|x| x.is_finite())
            && self.bias.gyro.iter().chain(self.bias.accel.iter()).all(|x| x.is_finite())
    }

    /// Symmetry within 1e-9 and minimum eigenvalue above -1e-9.
    pub fn check(&self) -> bool {
        self.is_finite() && asymmetry(&self.cov) < 1e-9 && min_eigenvalue(&self.cov) > -1e-9
    }
}

/// Noise model. All sigmas are per-axis standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Gyro white noise (rad/s).
    pub sigma_g: f64,
    /// Accelerometer white noise (m/s^2).
    pub sigma_a: f64,
    /// Gyro bias random walk (rad/s/sqrt(s)).
    pub sigma_bg: f64,
    /// Accelerometer bias random walk (m/s^2/sqrt(s)).
    pub sigma_ba: f64,
    /// Foot slip covariance in the body frame (m^2/s^2).
    pub slip_cov: Mat3,
    /// World-frame gravity, z up (m/s^2).
    pub gravity: Vec3,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::mpu6050()
    }
}

impl NoiseConfig {
    /// Order-of-magnitude values for a hobby-grade MEMS IMU sampled at 100 Hz.
    pub fn mpu6050() -> Self {
        NoiseConfig {
            sigma_g: 0.005,
            sigma_a: 0.05,
            sigma_bg: 1e-4,
            sigma_ba: 1e-3,
            slip_cov: Mat3::identity() * 1e-6,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }

    /// Everything zero except gravity.
    pub fn noiseless() -> Self {
        NoiseConfig {
            sigma_g: 0.0,
            sigma_a: 0.0,
            sigma_bg: 0.0,
            sigma_ba: 0.0,
            slip_cov: Mat3::zeros(),
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }

    /// Scales the white-noise sigmas of gyro and accelerometer.
    pub fn detuned(&self, gyro_factor: f64, accel_factor: f64) -> Self {
        NoiseConfig {
            sigma_g: self.sigma_g * gyro_factor,
            sigma_a: self.sigma_a * accel_factor,
            ..*self
        }
    }

    pub fn validate(&self, check_gravity: bool) -> Result<()> {
        let sigmas = [
            ("sigma_g", self.sigma_g),
            ("sigma_a", self.sigma_a),
            ("sigma_bg", self.sigma_bg),
            ("sigma_ba", self.sigma_ba),
        ];
        for (name, s) in sigmas {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        if asymmetry(&self.slip_cov) > 1e-12 {
            return Err(Error::InvalidConfig("slip_cov must be symmetric".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(self.slip_cov).eigenvalues;
        if eig.min() < -1e-12 || !eig.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("slip_cov must be positive semi-definite".into()));
        }
        let g = self.gravity.norm();
        if !g.is_finite() || (check_gravity && !(9.7..=9.9).contains(&g)) {
            return Err(Error::InvalidConfig(format!("|gravity| = {g} outside [9.7, 9.9]")));
        }
        Ok(())
    }
}

/// One output row: estimated (or true) pose at `t` with the stance flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub rot: Rot3,
    pub stance: bool,
}

impl TrajectoryPoint {
    pub fn from_nav(t: f64, nav: &SE23, stance: bool) -> Self {
        TrajectoryPoint {
            t,
            pos: nav.pos,
            vel: nav.vel,
            rot: nav.rot,
            stance,
        }
    }
}

/// Result of [`validate_log`].
#[derive(Clone, Debug, PartialEq)]
pub struct LogStats {
    /// Median of the per-interval rates, Hz.
    pub rate_hz: f64,
    /// Indices `i` where `t[i] - t[i-1]` exceeds five median intervals.
    pub gaps: Vec<usize>,
}

/// Checks ordering and magnitudes and estimates the sample rate.
pub fn validate_log(samples: &[ImuSample]) -> Result<LogStats> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { count: samples.len() });
    }
    for (index, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite("IMU sample"));
        }
        if s.gyro.iter().chain(s.accel.iter()).any(|x| x.abs() >= SAMPLE_LIMIT) {
            return Err(Error::OutOfRange { index, limit: SAMPLE_LIMIT });
        }
    }
    let mut dts = Vec::with_capacity(samples.len() - 1);
    for (i, w) in samples.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            return Err(Error::NonMonotone { index: i + 1, prev: w[0].t, t: w[1].t });
        }
        dts.push(dt);
    }
    let mut rates: Vec<f64> = dts.iter().map(|dt| 1.0 / dt).collect();
    rates.sort_by(f64::total_cmp);
    let median_rate = median_sorted(&rates);
    let median_dt = 1.0 / median_rate;
    let gaps = dts
        .iter()
        .enumerate()
        .filter(|(_, dt)| **dt > 5.0 * median_dt)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(LogStats { rate_hz: median_rate, gaps })
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Forward-Euler strapdown step shared by both filters.
///
/// Attitude advances by the bias-corrected rate; velocity and position use
/// the attitude at the start of the interval.
pub fn propagate_nav(nav: &SE23, bias: &ImuBias, sample: &ImuSample, dt: f64, gravity: &Vec3) -> SE23 {
    let omega = sample.gyro - bias.gyro;
    let f_world = nav.rot * (sample.accel - bias.accel);
    let acc = f_world + gravity;
    SE23 {
        rot: nav.rot * Rot3::exp(&(omega * dt)),
        vel: nav.vel + acc * dt,
        pos: nav.pos + nav.vel * dt + acc * (0.5 * dt * dt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(t: f64) -> ImuSample {
        ImuSample::new(t, Vec3::zeros(), Vec3::new(0.0, 0.0, 9.81))
    }

    #[test]
    fn initial_belief() {
        let b = FilterBelief::initial(&Vec15::zeros(), 0.0).unwrap();
        assert_eq!(b.cov, Mat15::zeros());
        assert_eq!(b.nav, SE23::identity());
        assert!(b.check());

        let b = FilterBelief::initial(&Vec15::repeat(1e-4), 1.5).unwrap();
        assert!((b.cov.trace() - 15e-4).abs() < 1e-18);
        assert!(b.check());

        let mut d = Vec15::repeat(1.0);
        d[7] = -1.0;
        assert!(matches!(
            FilterBelief::initial(&d, 0.0),
            Err(Error::NegativeCovariance { index: 7, .. })
        ));
    }

    #[test]
    fn validate_log_examples() {
        let stats = validate_log(&[at(0.0), at(0.01), at(0.02)]).unwrap();
        assert!((stats.rate_hz - 100.0).abs() < 1e-9);
        assert!(stats.gaps.is_empty());

        assert!(matches!(
            validate_log(&[at(0.0), at(0.02), at(0.01)]),
            Err(Error::NonMonotone { index: 2, .. })
        ));

        let stats = validate_log(&[at(0.0), at(0.01), at(0.02), at(0.5)]).unwrap();
        assert_eq!(stats.gaps, vec![3]);

        assert!(matches!(validate_log(&[at(0.0)]), Err(Error::TooFewSamples { count: 1 })));
    }

    #[test]
    fn noise_config_validation() {
        assert!(NoiseConfig::default().validate(true).is_ok());
        let mut c = NoiseConfig::default();
        c.sigma_a = -1.0;
        assert!(c.validate(true).is_err());
        let mut c = NoiseConfig::default();
        c.gravity = Vec3::new(0.0, 0.0, -1.62);
        assert!(c.validate(true).is_err());
        assert!(c.validate(false).is_ok());
    }

    #[test]
    fn stationary_level_equilibrium() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        let nav = propagate_nav(&SE23::identity(), &ImuBias::default(), &at(0.0), 0.01, &g);
        assert_eq!(nav, SE23::identity());
    }
}
