//! Analytic gait trajectories, their ideal IMU signals and a noise model.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::lie::{vee, Rot3, Vec3, SE23};
use crate::state::{propagate_nav, ImuBias, ImuSample, NoiseConfig, TrajectoryPoint};

/// Lowest sample rate accepted by the generator.
pub const MIN_RATE_HZ: f64 = 20.0;

/// Default sample rate.
pub const DEFAULT_RATE_HZ: f64 = 100.0;

/// Step-by-step walking pattern.
///
/// Each step is a swing of `(1 - stance_fraction) * step_duration` seconds
/// followed by a stance of `stance_fraction * step_duration`. The walk is
/// preceded by `lead_in` and followed by `tail` seconds of standing still.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSpec {
    /// Horizontal foot displacement per step (m).
    pub step_length: f64,
    /// Swing plus stance time per step (s).
    pub step_duration: f64,
    pub stance_fraction: f64,
    pub n_steps: usize,
    /// Heading of each step (rad). Empty means straight along +x.
    pub heading_profile: Vec<f64>,
    /// Height lost per step (m); positive descends.
    pub step_height: f64,
    /// Seed for the noise stage of scenarios built from this spec.
    pub rng_seed: u64,
    /// Standing time before the first step (s).
    pub lead_in: f64,
    /// Standing time after the last step (s).
    pub tail: f64,
    /// Peak foot clearance during swing (m).
    pub lift_height: f64,
}

impl GaitSpec {
    /// Pedestrian walk at 100 Hz: 1.2 s steps of 0.7 m.
    pub fn walking(n_steps: usize, heading_profile: Vec<f64>) -> Self {
        GaitSpec {
            step_length: 0.7,
            step_duration: 1.2,
            stance_fraction: 0.6,
            n_steps,
            heading_profile,
            step_height: 0.0,
            rng_seed: 0,
            lead_in: 2.0,
            tail: 10.0,
            lift_height: 0.08,
        }
    }

    /// Standing still for `duration` seconds.
    pub fn standing(duration: f64) -> Self {
        GaitSpec {
            n_steps: 0,
            heading_profile: Vec::new(),
            lead_in: duration,
            tail: 0.0,
            ..Self::walking(0, Vec::new())
        }
    }

    pub fn swing_duration(&self) -> f64 {
        (1.0 - self.stance_fraction) * self.step_duration
    }

    /// Length of the in-place turn before a step that changes heading.
    pub fn pivot_duration(&self) -> f64 {
        self.stance_fraction * self.step_duration / 3.0
    }

    pub fn total_duration(&self) -> f64 {
        self.lead_in + self.n_steps as f64 * self.step_duration + self.tail
    }

    /// Horizontal path length of the foot (m).
    pub fn path_length(&self) -> f64 {
        self.n_steps as f64 * self.step_length.hypot(self.step_height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGait(msg));
        let finite_nonneg = [
            ("step_length", self.step_length),
            ("step_height", self.step_height),
            ("lead_in", self.lead_in),
            ("tail", self.tail),
            ("lift_height", self.lift_height),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.step_duration > 0.0) || !self.step_duration.is_finite() {
            return bad(format!("step_duration must be > 0, got {}", self.step_duration));
        }
        if !(self.stance_fraction > 0.1 && self.stance_fraction < 0.9) {
            return bad(format!("stance_fraction must be in (0.1, 0.9), got {}", self.stance_fraction));
        }
        if !self.heading_profile.is_empty() && self.heading_profile.len() != self.n_steps {
            return bad(format!(
                "heading_profile has {} entries for {} steps",
                self.heading_profile.len(),
                self.n_steps
            ));
        }
        if self.heading_profile.iter().any(|h| !h.is_finite()) {
            return bad("heading_profile must be finite".into());
        }
        if self.n_steps > 0 && self.lead_in < 2.0 * self.pivot_duration() {
            return bad(format!("lead_in must be >= {} to fit the first pivot", 2.0 * self.pivot_duration()));
        }
        if !(self.total_duration() > 0.0) {
            return bad("total duration must be > 0".into());
        }
        Ok(())
    }

    fn heading(&self, k: usize) -> f64 {
        self.heading_profile.get(k).copied().unwrap_or(0.0)
    }
}

/// One ground-truth sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub nav: SE23,
    pub stance: bool,
    /// Body-frame angular rate, when known analytically.
    pub omega: Option<Vec3>,
    /// World-frame acceleration, when known analytically.
    pub accel_world: Option<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub samples: Vec<TruthSample>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stance_flags(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.stance).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn points(&self) -> Vec<TrajectoryPoint> {
        self.samples
            .iter()
            .map(|s| TrajectoryPoint::from_nav(s.t, &s.nav, s.stance))
            .collect()
    }

    /// Builds a ground truth without analytic derivatives, e.g. from a file.
    pub fn from_points(points: &[TrajectoryPoint]) -> Self {
        GroundTruth {
            samples: points
                .iter()
                .map(|p| TruthSample {
                    t: p.t,
                    nav: SE23::new(p.rot, p.vel, p.pos),
                    stance: p.stance,
                    omega: None,
                    accel_world: None,
                })
                .collect(),
        }
    }
}

/// Smooth step `35 s^4 - 84 s^5 + 70 s^6 - 20 s^7` and its first two
/// derivatives with respect to `s`. Velocity, acceleration and jerk vanish at
/// both ends, so forward-Euler integration of the ideal signals leaves no
/// second-order residual at the end of a swing.
fn smooth_step(s: f64) -> (f64, f64, f64) {
    let u = s * (1.0 - s);
    let s4 = s * s * s * s;
    (
        s4 * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s * s * s),
        140.0 * u * u * u,
        420.0 * u * u * (1.0 - 2.0 * s),
    )
}

/// Foot clearance bump `sin^4(pi s)` peaking at 1, and its derivatives.
/// Every odd derivative vanishes at both ends.
fn lift_bump(s: f64) -> (f64, f64, f64) {
    let (sn, cs) = (PI * s).sin_cos();
    let s2 = sn * sn;
    (
        s2 * s2,
        4.0 * PI * s2 * sn * cs,
        4.0 * PI * PI * s2 * (3.0 * cs * cs - s2),
    )
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Samples the gait at `rate_hz` with analytic velocity, acceleration and
/// angular rate.
///
/// Yaw starts at zero. Each heading change is made by pivoting the planted
/// foot in place during the middle third of the stance that precedes the
/// step (the lead-in for the first step), so the foot never turns while it
/// accelerates. Roll and pitch stay zero.
pub fn generate_gait(spec: &GaitSpec, rate_hz: f64) -> Result<GroundTruth> {
    spec.validate()?;
    if !(rate_hz >= MIN_RATE_HZ) || !rate_hz.is_finite() {
        return Err(Error::InvalidGait(format!("rate_hz must be >= {MIN_RATE_HZ}, got {rate_hz}")));
    }
    let n = (spec.total_duration() * rate_hz).round() as usize;
    let swing = spec.swing_duration();
    let pivot = spec.pivot_duration();

    // Foot position at the start of each swing and yaw during it. Unit
    // directions are summed first so that straight walks land on exact
    // multiples of the step length.
    let mut feet = Vec::with_capacity(spec.n_steps + 1);
    let mut yaws = Vec::with_capacity(spec.n_steps + 1);
    let (mut dirs, mut yaw) = (Vec3::zeros(), 0.0);
    yaws.push(yaw);
    for k in 0..=spec.n_steps {
        feet.push(Vec3::new(
            dirs.x * spec.step_length,
            dirs.y * spec.step_length,
            -(k as f64) * spec.step_height,
        ));
        if k < spec.n_steps {
            let h = spec.heading(k);
            dirs += Vec3::new(h.cos(), h.sin(), 0.0);
            yaw += wrap_angle(h - yaw);
            yaws.push(yaw);
        }
    }
    // yaws[k] is the heading before the pivot of step k, yaws[k + 1] after it.

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate_hz;
        let rel = t - spec.lead_in;
        // Index of the step whose swing starts next or is under way.
        let k = if rel < 0.0 {
            0
        } else {
            ((rel / spec.step_duration).floor() as usize).min(spec.n_steps)
        };
        let phase = rel - k as f64 * spec.step_duration;
        let swinging = k < spec.n_steps && phase > 0.0 && phase < swing;
        let swung = k < spec.n_steps && phase >= swing;

        let (pos, vel, acc) = if swinging {
            let s = phase / swing;
            let (m, dm, ddm) = smooth_step(s);
            let (b, db, ddb) = lift_bump(s);
            let d = feet[k + 1] - feet[k];
            let up = Vec3::z() * spec.lift_height;
            (
                feet[k] + d * m + up * b,
                (d * dm + up * db) / swing,
                (d * ddm + up * ddb) / (swing * swing),
            )
        } else {
            let foot = if swung { feet[k + 1] } else { feet[k] };
            (foot, Vec3::zeros(), Vec3::zeros())
        };

        // The next pivot belongs to step `k` while its swing has not started,
        // otherwise to step `k + 1`.
        let j = if swinging || swung { k + 1 } else { k };
        let (psi, psi_rate) = if j < spec.n_steps {
            let to_swing = spec.lead_in + j as f64 * spec.step_duration - t;
            let s = (2.0 * pivot - to_swing) / pivot;
            if s <= 0.0 {
                (yaws[j], 0.0)
            } else if s >= 1.0 {
                (yaws[j + 1], 0.0)
            } else {
                let (m, dm, _) = smooth_step(s);
                let dyaw = yaws[j + 1] - yaws[j];
                (yaws[j] + dyaw * m, dyaw * dm / pivot)
            }
        } else {
            (yaws[spec.n_steps], 0.0)
        };

        samples.push(TruthSample {
            t,
            nav: SE23::new(Rot3::from_yaw(psi), vel, pos),
            stance: !swinging,
            omega: Some(Vec3::new(0.0, 0.0, psi_rate)),
            accel_world: Some(acc),
        });
    }
    Ok(GroundTruth { samples })
}

/// Ideal body-frame IMU signals `omega = vee(R^T dR/dt)`,
/// `a = R^T (dv/dt - g)`. Missing analytic derivatives fall back to central
/// differences with one-sided stencils at the ends.
pub fn inverse_imu(gt: &GroundTruth, gravity: &Vec3) -> Vec<ImuSample> {
    let s = &gt.samples;
    let n = s.len();
    let neighbours = |i: usize| -> (usize, usize) {
        if n < 2 {
            (i, i)
        } else if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        }
    };
    (0..n)
        .map(|i| {
            let (a, b) = neighbours(i);
            let span = s[b].t - s[a].t;
            let omega = s[i].omega.unwrap_or_else(|| {
                if a == b {
                    return Vec3::zeros();
                }
                let rel = s[a].nav.rot.transpose() * s[b].nav.rot;
                // Rotation over the stencil, referred to sample i's body frame.
                let w = rel.log().unwrap_or_else(|_| vee(&(rel.matrix() - rel.matrix().transpose())) * 0.5) / span;
                (s[i].nav.rot.transpose() * s[a].nav.rot) * w
            });
            let acc = s[i].accel_world.unwrap_or_else(|| {
                if a == b {
                    Vec3::zeros()
                } else {
                    (s[b].nav.vel - s[a].nav.vel) / span
                }
            });
            ImuSample::new(s[i].t, omega, s[i].nav.rot.transpose() * (acc - gravity))
        })
        .collect()
}

/// Adds white noise and a random-walk bias to ideal samples.
///
/// The bias starts at `bias0` and takes one step of standard deviation
/// `sigma_b * sqrt(dt)` per interval. Deterministic for a given seed.
pub fn corrupt(samples: &[ImuSample], cfg: &NoiseConfig, bias0: &ImuBias, seed: u64) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> Vec3 { Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng)) };
    let mut bias = *bias0;
    let mut prev_t = samples.first().map_or(0.0, |s| s.t);
    samples
        .iter()
        .map(|s| {
            let dt = (s.t - prev_t).max(0.0);
            prev_t = s.t;
            let walk_g = gauss();
            let walk_a = gauss();
            let white_g = gauss();
            let white_a = gauss();
            bias.gyro += walk_g * (cfg.sigma_bg * dt.sqrt());
            bias.accel += walk_a * (cfg.sigma_ba * dt.sqrt());
            ImuSample::new(
                s.t,
                s.gyro + bias.gyro + white_g * cfg.sigma_g,
                s.accel + bias.accel + white_a * cfg.sigma_a,
            )
        })
        .collect()
}

/// Noise-free strapdown integration starting from the first truth state.
pub fn integrate(samples: &[ImuSample], start: &SE23, gravity: &Vec3) -> Vec<SE23> {
    let mut out = Vec::with_capacity(samples.len());
    let mut nav = *start;
    let bias = ImuBias::default();
    for (k, s) in samples.iter().enumerate() {
        if k > 0 {
            nav = propagate_nav(&nav, &bias, &samples[k - 1], s.t - samples[k - 1].t, gravity);
        }
        out.push(nav);
    }
    out
}

/// Built-in simulation scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Static,
    Line,
    SquareLoop,
    Stairs,
    RobotGait,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Static,
        Scenario::Line,
        Scenario::SquareLoop,
        Scenario::Stairs,
        Scenario::RobotGait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::Line => "line",
            Scenario::SquareLoop => "square_loop",
            Scenario::Stairs => "stairs",
            Scenario::RobotGait => "robot_gait",
        }
    }

    pub fn spec(self) -> GaitSpec {
        match self {
            Scenario::Static => GaitSpec::standing(60.0),
            Scenario::Line => GaitSpec::walking(20, vec![0.0; 20]),
            Scenario::SquareLoop => GaitSpec::walking(40, square_headings(10)),
            Scenario::Stairs => GaitSpec {
                step_length: 0.3,
                step_height: 0.17,
                ..GaitSpec::walking(14, vec![0.0; 14])
            },
            Scenario::RobotGait => GaitSpec {
                step_length: 0.12,
                step_duration: 1.0 / 3.0,
                stance_fraction: 0.5,
                lift_height: 0.03,
                tail: 2.0,
                ..GaitSpec::walking(60, square_headings(15))
            },
        }
    }

    /// Detector settings suited to the scenario's step rate.
    pub fn detector(self) -> DetectorConfig {
        match self {
            Scenario::RobotGait => DetectorConfig::robot_preset(),
            _ => DetectorConfig::default(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scenario::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|c| c.name()).collect();
            format!("unknown scenario `{s}` (valid choices: {})", names.join(", "))
        })
    }
}

/// Headings for a counter-clockwise square with `per_side` steps per side.
pub fn square_headings(per_side: usize) -> Vec<f64> {
    (0..4)
        .flat_map(|side| std::iter::repeat_n(side as f64 * PI / 2.0, per_side))
        .collect()
}

/// Ground truth plus its ideal and corrupted IMU streams.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub truth: GroundTruth,
    pub ideal: Vec<ImuSample>,
    pub measured: Vec<ImuSample>,
}

pub fn simulate(spec: &GaitSpec, rate_hz: f64, noise: &NoiseConfig, bias0: &ImuBias, seed: u64) -> Result<SimRun> {
    noise.validate(false)?;
    let truth = generate_gait(spec, rate_hz)?;
    let ideal = inverse_imu(&truth, &noise.gravity);
    let measured = corrupt(&ideal, noise, bias0, seed);
    Ok(SimRun { truth, ideal, measured })
}
