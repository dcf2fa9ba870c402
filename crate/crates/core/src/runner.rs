//! The per-sample filter loop shared by both estimators.

use std::fmt;
use std::str::FromStr;

use crate::detector::{DetectorConfig, StanceDetector};
use crate::ekf::ErrorStateEkf;
use crate::error::{Error, Result};
use crate::inekf::{init_from_static, InvariantEkf};
use crate::linalg::Vec15;
use crate::state::{validate_log, FilterBelief, ImuBias, ImuSample, NoiseConfig, TrajectoryPoint};

/// Prediction steps between attitude re-orthonormalizations.
pub const REORTHONORMALIZE_EVERY: usize = 1000;

/// A navigation filter driven one IMU sample at a time.
pub trait NavFilter {
    fn predict(&mut self, sample: &ImuSample, dt: f64) -> Result<()>;

    /// Applies the zero-velocity pseudo-measurement. A degenerate innovation
    /// leaves the belief untouched and returns [`Error::DegenerateUpdate`].
    fn zupt(&mut self) -> Result<()>;

    fn belief(&self) -> &FilterBelief;

    fn belief_mut(&mut self) -> &mut FilterBelief;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Inekf,
    Ekf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 2] = [FilterKind::Inekf, FilterKind::Ekf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Inekf => "inekf",
            FilterKind::Ekf => "ekf",
        }
    }

    pub fn build(self, belief: FilterBelief, cfg: NoiseConfig) -> Box<dyn NavFilter + Send> {
        match self {
            FilterKind::Inekf => Box::new(InvariantEkf::new(belief, cfg)),
            FilterKind::Ekf => Box::new(ErrorStateEkf::new(belief, cfg)),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inekf" => Ok(FilterKind::Inekf),
            "ekf" => Ok(FilterKind::Ekf),
            other => Err(format!("unknown filter `{other}` (valid choices: inekf, ekf)")),
        }
    }
}

/// Output of one filter pass.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub points: Vec<TrajectoryPoint>,
    /// Bias estimate after processing each sample.
    pub biases: Vec<ImuBias>,
    pub updates: usize,
    pub skipped_updates: usize,
    pub final_belief: FilterBelief,
}

/// Everything a filter pass needs besides the samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub noise: NoiseConfig,
    pub detector: DetectorConfig,
    pub init_window: usize,
    pub cov0: Vec15,
}

/// Detects stance causally, then runs the filter.
pub fn run_filter(kind: FilterKind, samples: &[ImuSample], settings: &RunSettings) -> Result<FilterRun> {
    let flags = detect_all(samples, &settings.detector, &settings.noise);
    run_with_flags(kind, samples, &flags, settings)
}

pub fn detect_all(samples: &[ImuSample], cfg: &DetectorConfig, noise: &NoiseConfig) -> Vec<bool> {
    let mut det = StanceDetector::new(*cfg, noise.gravity.norm());
    samples.iter().map(|s| det.detect(s)).collect()
}

/// Runs a filter with precomputed stance flags, one output point per sample.
///
/// The first `init_window` samples set the initial attitude and are emitted
/// with the initial state. After that, sample `k - 1` is integrated over
/// `[t_{k-1}, t_k]` and a zero-velocity update follows whenever sample `k`
/// is flagged as stance.
pub fn run_with_flags(kind: FilterKind, samples: &[ImuSample], flags: &[bool], settings: &RunSettings) -> Result<FilterRun> {
    validate_log(samples)?;
    if flags.len() != samples.len() {
        return Err(Error::LengthMismatch { flags: flags.len(), times: samples.len() });
    }
    let n = settings.init_window;
    if n == 0 || n > samples.len() {
        return Err(Error::InvalidConfig(format!(
            "init_window must be in 1..={}, got {n}",
            samples.len()
        )));
    }
    settings.noise.validate(false)?;

    let mut belief = FilterBelief::initial(&settings.cov0, samples[n - 1].t)?;
    belief.nav.rot = init_from_static(&samples[..n], &settings.noise.gravity)?;
    let mut filter = kind.build(belief, settings.noise);

    let mut points = Vec::with_capacity(samples.len());
    let mut biases = Vec::with_capacity(samples.len());
    for (s, &stance) in samples[..n].iter().zip(flags) {
        points.push(TrajectoryPoint::from_nav(s.t, &belief.nav, stance));
        biases.push(belief.bias);
    }

    let (mut updates, mut skipped_updates) = (0, 0);
    for k in n..samples.len() {
        let dt = samples[k].t - samples[k - 1].t;
        filter.predict(&samples[k - 1], dt)?;
        if flags[k] {
            match filter.zupt() {
                Ok(()) => updates += 1,
                Err(Error::DegenerateUpdate { .. }) => skipped_updates += 1,
                Err(e) => return Err(e),
            }
        }
        let b = filter.belief();
        if !b.is_finite() {
            return Err(Error::NonFinite("filter state"));
        }
        points.push(TrajectoryPoint::from_nav(samples[k].t, &b.nav, flags[k]));
        biases.push(b.bias);
    }
    Ok(FilterRun {
        points,
        biases,
        updates,
        skipped_updates,
        final_belief: *filter.belief(),
    })
}
