//! Threshold and sliding-window stance detection on raw IMU magnitudes.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::state::ImuSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Upper bound on the gyro magnitude (rad/s).
    pub gyro_thresh: f64,
    /// Upper bound on `| |accel| - |g| |` (m/s^2).
    pub accel_thresh: f64,
    /// Sliding window length in samples.
    pub window: usize,
    /// Consecutive candidate samples required before stance is asserted.
    pub min_stance: usize,
    /// When false every sample is reported as swing.
    pub enabled: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            gyro_thresh: 0.3,
            accel_thresh: 0.8,
            window: 15,
            min_stance: 5,
            enabled: true,
        }
    }
}

impl DetectorConfig {
    /// Default thresholds with window and run length halved (rounded up) for
    /// fast, roughly 3 Hz, legged-robot gaits.
    pub fn robot_preset() -> Self {
        let d = Self::default();
        DetectorConfig {
            window: d.window.div_ceil(2),
            min_stance: d.min_stance.div_ceil(2),
            ..d
        }
    }

    pub fn disabled() -> Self {
        DetectorConfig { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gyro_thresh > 0.0) || !self.gyro_thresh.is_finite() {
            return Err(Error::InvalidConfig(format!("gyro_thresh must be > 0, got {}", self.gyro_thresh)));
        }
        if !(self.accel_thresh > 0.0) || !self.accel_thresh.is_finite() {
            return Err(Error::InvalidConfig(format!("accel_thresh must be > 0, got {}", self.accel_thresh)));
        }
        if self.window < 2 {
            return Err(Error::InvalidConfig(format!("window must be >= 2, got {}", self.window)));
        }
        if self.min_stance < 1 {
            return Err(Error::InvalidConfig("min_stance must be >= 1".into()));
        }
        Ok(())
    }
}

/// Causal stance detector over a ring buffer of candidate flags.
#[derive(Clone, Debug)]
pub struct StanceDetector {
    cfg: DetectorConfig,
    g_norm: f64,
    buffer: VecDeque<bool>,
    run: usize,
}

impl StanceDetector {
    pub fn new(cfg: DetectorConfig, g_norm: f64) -> Self {
        StanceDetector {
            cfg,
            g_norm,
            buffer: VecDeque::with_capacity(cfg.window),
            run: 0,
        }
    }

    pub fn is_candidate(&self, sample: &ImuSample) -> bool {
        sample.gyro.norm() < self.cfg.gyro_thresh && (sample.accel.norm() - self.g_norm).abs() < self.cfg.accel_thresh
    }

    /// Pushes one sample and returns the stance flag for it.
    pub fn detect(&mut self, sample: &ImuSample) -> bool {
        let candidate = self.is_candidate(sample);
        self.run = if candidate { self.run + 1 } else { 0 };
        if self.buffer.len() == self.cfg.window.max(1) {
            self.buffer.pop_front();
        }
        self.buffer.push_back(candidate);
        self.cfg.enabled
            && self.buffer.len() == self.cfg.window.max(1)
            && self.buffer.front() == Some(&true)
            && self.buffer.back() == Some(&true)
            && self.run >= self.cfg.min_stance
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.run = 0;
    }
}

/// A maximal run of stance samples, indices inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StanceEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub start_index: usize,
    pub end_index: usize,
}

impl StanceEvent {
    pub fn sample_count(&self) -> usize {
        self.end_index - self.start_index + 1
    }
}

pub fn segment_events(flags: &[bool], times: &[f64]) -> Result<Vec<StanceEvent>> {
    if flags.len() != times.len() {
        return Err(Error::LengthMismatch { flags: flags.len(), times: times.len() });
    }
    let mut events = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                events.push(StanceEvent {
                    t_start: times[s],
                    t_end: times[i - 1],
                    start_index: s,
                    end_index: i - 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    Ok(events)
}

/// Intersection over union of two flag sequences of equal length.
pub fn flag_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
