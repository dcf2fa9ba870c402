//! CSV logs and trajectories, and the `key = value` configuration format.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::lie::{Mat3, Rot3, Vec3};
use crate::linalg::Vec15;
use crate::runner::RunSettings;
use crate::sim::{GaitSpec, Scenario};
use crate::state::{ImuSample, NoiseConfig, TrajectoryPoint, SAMPLE_LIMIT};

pub const IMU_HEADER: [&str; 7] = ["t", "wx", "wy", "wz", "ax", "ay", "az"];
pub const TRAJECTORY_HEADER: [&str; 12] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "stance",
];
pub const STANCE_HEADER: [&str; 2] = ["t", "stance"];

/// Allowed deviation of a stored quaternion from unit norm.
pub const QUATERNION_NORM_TOL: f64 = 1e-9;

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros removed,
/// exponent form outside `[1e-4, 1e12)`. Negative zero prints as `0`.
pub fn format_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (11 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

/// Reads a CSV stream, checks the header exactly and returns the numeric rows
/// with their 1-based line numbers.
fn read_numeric<R: Read>(reader: R, name: &str, header: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let head = match records.next() {
        Some(r) => r?,
        None => StringRecord::new(),
    };
    for (i, expected) in header.iter().enumerate() {
        let found = head.get(i).unwrap_or("");
        if found != *expected {
            return Err(Error::Header {
                path: name.into(),
                column: i + 1,
                found: found.into(),
                expected: (*expected).into(),
            });
        }
    }
    if head.len() != header.len() {
        return Err(Error::ColumnCount { path: name.into(), line: 1, expected: header.len(), found: head.len() });
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::ColumnCount { path: name.into(), line, expected: header.len(), found: rec.len() });
        }
        let mut row = Vec::with_capacity(header.len());
        for (cell, column) in rec.iter().zip(header) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Cell {
                        path: name.into(),
                        line,
                        column: (*column).into(),
                        value: cell.into(),
                    })
                }
            }
        }
        rows.push((line, row));
    }
    Ok(rows)
}

/// Parses an IMU log, checking header, cell values, magnitudes and time order.
pub fn read_imu_csv<R: Read>(reader: R, name: &str) -> Result<Vec<ImuSample>> {
    let rows = read_numeric(reader, name, &IMU_HEADER)?;
    let mut out: Vec<ImuSample> = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let s = ImuSample::new(r[0], Vec3::new(r[1], r[2], r[3]), Vec3::new(r[4], r[5], r[6]));
        if let Some(prev) = out.last() {
            if !(s.t > prev.t) {
                return Err(Error::Syntax {
                    path: name.into(),
                    line,
                    message: format!("time {} does not increase (previous {})", s.t, prev.t),
                });
            }
        }
        if s.gyro.iter().chain(s.accel.iter()).any(|x| x.abs() >= SAMPLE_LIMIT) {
            return Err(Error::Syntax {
                path: name.into(),
                line,
                message: format!("sample magnitude exceeds {SAMPLE_LIMIT}"),
            });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn parse_imu_log(path: &Path) -> Result<Vec<ImuSample>> {
    read_imu_csv(open(path)?, &path.display().to_string())
}

pub fn write_imu_csv<W: Write>(samples: &[ImuSample], w: W) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(IMU_HEADER)?;
    for s in samples {
        let row = [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z];
        wtr.write_record(row.iter().map(|v| format_num(*v)))?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_imu_log(samples: &[ImuSample], path: &Path) -> Result<()> {
    write_imu_csv(samples, create(path)?)
}

pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], w: W) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(TRAJECTORY_HEADER)?;
    for p in points {
        let q = p.rot.to_quaternion();
        let mut row: Vec<String> = [p.t, p.pos.x, p.pos.y, p.pos.z, p.vel.x, p.vel.y, p.vel.z, q[0], q[1], q[2], q[3]]
            .iter()
            .map(|v| format_num(*v))
            .collect();
        row.push(if p.stance { "1" } else { "0" }.into());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_trajectory(points: &[TrajectoryPoint], path: &Path) -> Result<()> {
    write_trajectory_csv(points, create(path)?)
}

pub fn read_trajectory_csv<R: Read>(reader: R, name: &str) -> Result<Vec<TrajectoryPoint>> {
    let rows = read_numeric(reader, name, &TRAJECTORY_HEADER)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let q = [r[7], r[8], r[9], r[10]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(Error::Syntax {
                path: name.into(),
                line,
                message: format!("quaternion norm {norm} is not 1"),
            });
        }
        let stance = match r[11] {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            v => {
                return Err(Error::Cell {
                    path: name.into(),
                    line,
                    column: "stance".into(),
                    value: v.to_string(),
                })
            }
        };
        out.push(TrajectoryPoint {
            t: r[0],
            pos: Vec3::new(r[1], r[2], r[3]),
            vel: Vec3::new(r[4], r[5], r[6]),
            rot: Rot3::from_quaternion(q),
            stance,
        });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    read_trajectory_csv(open(path)?, &path.display().to_string())
}

pub fn write_stance_labels(times: &[f64], flags: &[bool], path: &Path) -> Result<()> {
    if times.len() != flags.len() {
        return Err(Error::LengthMismatch { flags: flags.len(), times: times.len() });
    }
    let mut wtr = csv_writer(create(path)?);
    wtr.write_record(STANCE_HEADER)?;
    for (t, f) in times.iter().zip(flags) {
        wtr.write_record([format_num(*t), if *f { "1" } else { "0" }.to_string()])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One `key = value` line of a configuration-style file.
#[derive(Clone, Debug, PartialEq)]
pub struct KvEntry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed `key = value` file with optional `[section]` headers and `#`
/// comments.
#[derive(Clone, Debug, PartialEq)]
pub struct KvFile {
    pub path: String,
    pub entries: Vec<KvEntry>,
}

impl KvFile {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut section = None;
        let mut entries: Vec<KvEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: &str| Error::Syntax { path: path.into(), line, message: message.into() };
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| syntax("unterminated section header"))?.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(syntax("invalid section name"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| syntax("expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(syntax("missing key"));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key && e.section == section) {
                return Err(syntax(&format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            entries.push(KvEntry { section: section.clone(), key: key.into(), value: value.into(), line });
        }
        Ok(KvFile { path: path.into(), entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn unknown(&self, e: &KvEntry) -> Error {
        let key = match &e.section {
            Some(s) => format!("{s}.{}", e.key),
            None => e.key.clone(),
        };
        Error::UnknownKey { path: self.path.clone(), line: e.line, key }
    }

    pub fn bad_value(&self, e: &KvEntry) -> Error {
        Error::BadValue { path: self.path.clone(), line: e.line, key: e.key.clone(), value: e.value.clone() }
    }

    pub fn f64(&self, e: &KvEntry) -> Result<f64> {
        e.value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| self.bad_value(e))
    }

    pub fn usize(&self, e: &KvEntry) -> Result<usize> {
        e.value.parse::<usize>().map_err(|_| self.bad_value(e))
    }

    pub fn u64(&self, e: &KvEntry) -> Result<u64> {
        e.value.parse::<u64>().map_err(|_| self.bad_value(e))
    }

    pub fn bool(&self, e: &KvEntry) -> Result<bool> {
        match e.value.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.bad_value(e)),
        }
    }

    /// `[a, b, c]`; an empty list is `[]`.
    pub fn list(&self, e: &KvEntry) -> Result<Vec<String>> {
        let inner = e
            .value
            .strip_prefix('[')
            .and_then(|v| v.strip_suffix(']'))
            .ok_or_else(|| self.bad_value(e))?
            .trim();
        if inner.is_empty() {
            return Ok(Vec::new());
        }
        Ok(inner.split(',').map(|s| s.trim().to_string()).collect())
    }

    pub fn f64_list(&self, e: &KvEntry) -> Result<Vec<f64>> {
        self.list(e)?
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.bad_value(e))
    }

    pub fn f64_array<const N: usize>(&self, e: &KvEntry) -> Result<[f64; N]> {
        self.f64_list(e)?.try_into().map_err(|_| self.bad_value(e))
    }

    /// Resolves the section of an entry: keys outside any section are looked
    /// up among all known sections by name.
    pub fn section_of<'a>(&self, e: &'a KvEntry, known: &[(&'a str, &[&str])]) -> Result<&'a str> {
        match &e.section {
            Some(s) => known
                .iter()
                .find(|(name, keys)| name == s && keys.contains(&e.key.as_str()))
                .map(|(name, _)| *name)
                .ok_or_else(|| self.unknown(e)),
            None => known
                .iter()
                .find(|(_, keys)| keys.contains(&e.key.as_str()))
                .map(|(name, _)| *name)
                .ok_or_else(|| self.unknown(e)),
        }
    }
}

const NOISE_KEYS: &[&str] = &["sigma_g", "sigma_a", "sigma_bg", "sigma_ba", "slip_cov", "gravity"];
const DETECTOR_KEYS: &[&str] = &["gyro_thresh", "accel_thresh", "window", "min_stance", "enabled"];
const INIT_KEYS: &[&str] = &["init_window", "check_gravity"];
const FILTER_KEYS: &[&str] = &[
    "cov0_attitude",
    "cov0_velocity",
    "cov0_position",
    "cov0_gyro_bias",
    "cov0_accel_bias",
];

/// Everything a config file can set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub noise: NoiseConfig,
    pub detector: DetectorConfig,
    /// Samples averaged for the initial attitude.
    pub init_window: usize,
    /// Reject gravity magnitudes outside [9.7, 9.9] m/s^2.
    pub check_gravity: bool,
    /// Initial covariance per block: attitude, velocity, position, gyro bias,
    /// accel bias. Each applies to all three axes of its block.
    pub cov0: [f64; 5],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            noise: NoiseConfig::default(),
            detector: DetectorConfig::default(),
            init_window: 100,
            check_gravity: true,
            cov0: [1e-4, 1e-4, 1e-6, 1e-4, 1e-2],
        }
    }
}

impl RunConfig {
    pub fn cov0_diagonal(&self) -> Vec15 {
        Vec15::from_fn(|i, _| self.cov0[i / 3])
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            noise: self.noise,
            detector: self.detector,
            init_window: self.init_window,
            cov0: self.cov0_diagonal(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate(self.check_gravity)?;
        self.detector.validate()?;
        if self.init_window == 0 {
            return Err(Error::InvalidConfig("init_window must be >= 1".into()));
        }
        if let Some(v) = self.cov0.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial covariance must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    /// Applies the entries of a parsed file on top of the defaults.
    pub fn from_kv(file: &KvFile) -> Result<Self> {
        let known: [(&str, &[&str]); 4] = [
            ("noise", NOISE_KEYS),
            ("detector", DETECTOR_KEYS),
            ("init", INIT_KEYS),
            ("filter", FILTER_KEYS),
        ];
        let mut c = RunConfig::default();
        for e in &file.entries {
            file.section_of(e, &known)?;
            let nonneg = |v: f64| if v >= 0.0 { Ok(v) } else { Err(file.bad_value(e)) };
            match e.key.as_str() {
                "sigma_g" => c.noise.sigma_g = nonneg(file.f64(e)?)?,
                "sigma_a" => c.noise.sigma_a = nonneg(file.f64(e)?)?,
                "sigma_bg" => c.noise.sigma_bg = nonneg(file.f64(e)?)?,
                "sigma_ba" => c.noise.sigma_ba = nonneg(file.f64(e)?)?,
                "slip_cov" => c.noise.slip_cov = Mat3::from_row_slice(&file.f64_array::<9>(e)?),
                "gravity" => c.noise.gravity = Vec3::from(file.f64_array::<3>(e)?),
                "gyro_thresh" => c.detector.gyro_thresh = file.f64(e)?,
                "accel_thresh" => c.detector.accel_thresh = file.f64(e)?,
                "window" => c.detector.window = file.usize(e)?,
                "min_stance" => c.detector.min_stance = file.usize(e)?,
                "enabled" => c.detector.enabled = file.bool(e)?,
                "init_window" => c.init_window = file.usize(e)?,
                "check_gravity" => c.check_gravity = file.bool(e)?,
                "cov0_attitude" => c.cov0[0] = nonneg(file.f64(e)?)?,
                "cov0_velocity" => c.cov0[1] = nonneg(file.f64(e)?)?,
                "cov0_position" => c.cov0[2] = nonneg(file.f64(e)?)?,
                "cov0_gyro_bias" => c.cov0[3] = nonneg(file.f64(e)?)?,
                "cov0_accel_bias" => c.cov0[4] = nonneg(file.f64(e)?)?,
                _ => return Err(file.unknown(e)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        Self::from_kv(&KvFile::parse(text, path)?)
    }

    /// The full effective configuration in the file format. Parsing the dump
    /// reproduces the configuration exactly.
    pub fn dump(&self) -> String {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        let slip: Vec<f64> = self.noise.slip_cov.transpose().iter().copied().collect();
        let mut s = String::new();
        let n = &self.noise;
        let d = &self.detector;
        let _ = writeln!(s, "[noise]");
        let _ = writeln!(s, "sigma_g = {}", n.sigma_g);
        let _ = writeln!(s, "sigma_a = {}", n.sigma_a);
        let _ = writeln!(s, "sigma_bg = {}", n.sigma_bg);
        let _ = writeln!(s, "sigma_ba = {}", n.sigma_ba);
        let _ = writeln!(s, "slip_cov = {}", list(&slip));
        let _ = writeln!(s, "gravity = {}", list(n.gravity.as_slice()));
        let _ = writeln!(s, "\n[detector]");
        let _ = writeln!(s, "gyro_thresh = {}", d.gyro_thresh);
        let _ = writeln!(s, "accel_thresh = {}", d.accel_thresh);
        let _ = writeln!(s, "window = {}", d.window);
        let _ = writeln!(s, "min_stance = {}", d.min_stance);
        let _ = writeln!(s, "enabled = {}", d.enabled);
        let _ = writeln!(s, "\n[init]");
        let _ = writeln!(s, "init_window = {}", self.init_window);
        let _ = writeln!(s, "check_gravity = {}", self.check_gravity);
        let _ = writeln!(s, "\n[filter]");
        for (key, v) in FILTER_KEYS.iter().zip(self.cov0) {
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_kv(&KvFile::load(path)?)
}

const GAIT_KEYS: &[&str] = &[
    "base",
    "rate_hz",
    "step_length",
    "step_duration",
    "stance_fraction",
    "n_steps",
    "heading_profile",
    "step_height",
    "rng_seed",
    "lead_in",
    "tail",
    "lift_height",
];

/// A gait read from a gait file, with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitFile {
    pub spec: GaitSpec,
    pub rate_hz: f64,
    pub base: Option<Scenario>,
}

/// Reads a gait spec. `base = <scenario>` starts from a built-in scenario;
/// the remaining keys override its fields.
pub fn parse_gait(file: &KvFile) -> Result<GaitFile> {
    let known: [(&str, &[&str]); 1] = [("gait", GAIT_KEYS)];
    let base = match file.entries.iter().find(|e| e.key == "base") {
        Some(e) => Some(e.value.parse::<Scenario>().map_err(|_| file.bad_value(e))?),
        None => None,
    };
    let mut spec = base.map_or_else(|| GaitSpec::walking(0, Vec::new()), Scenario::spec);
    let mut rate_hz = crate::sim::DEFAULT_RATE_HZ;
    for e in &file.entries {
        file.section_of(e, &known)?;
        match e.key.as_str() {
            "base" => {}
            "rate_hz" => rate_hz = file.f64(e)?,
            "step_length" => spec.step_length = file.f64(e)?,
            "step_duration" => spec.step_duration = file.f64(e)?,
            "stance_fraction" => spec.stance_fraction = file.f64(e)?,
            "n_steps" => spec.n_steps = file.usize(e)?,
            "heading_profile" => spec.heading_profile = file.f64_list(e)?,
            "step_height" => spec.step_height = file.f64(e)?,
            "rng_seed" => spec.rng_seed = file.u64(e)?,
            "lead_in" => spec.lead_in = file.f64(e)?,
            "tail" => spec.tail = file.f64(e)?,
            "lift_height" => spec.lift_height = file.f64(e)?,
            _ => return Err(file.unknown(e)),
        }
    }
    if spec.heading_profile.len() > spec.n_steps {
        spec.heading_profile.truncate(spec.n_steps);
    }
    spec.validate()?;
    Ok(GaitFile { spec, rate_hz, base })
}
