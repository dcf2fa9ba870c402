//! Subcommands behind the `pdr` binary: run, simulate, compare, sweep and
//! print-config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use pdr_core::detector::segment_events;
use pdr_core::io::{
    format_num, load_config, parse_gait, parse_imu_log, read_trajectory, write_imu_log, write_stance_labels,
    write_trajectory, KvFile, RunConfig,
};
use pdr_core::metrics::MetricReport;
use pdr_core::runner::{detect_all, run_filter, run_with_flags, FilterKind};
use pdr_core::sim::{simulate, Scenario, DEFAULT_RATE_HZ};
use pdr_core::state::{validate_log, ImuBias, ImuSample};

pub mod sweep;

pub use sweep::{cmd_sweep, run_sweep, SweepArgs, SweepRow, SweepSpec, Target};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// File names written by `simulate` and `compare` into their output directory.
pub const IMU_FILE: &str = "imu.csv";
pub const GT_FILE: &str = "gt.csv";
pub const STANCE_FILE: &str = "stance.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pdr_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 1 for parse and validation failures, 2 for a non-finite filter state.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(pdr_core::Error::NonFinite(_)) | CliError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Config file contents on top of the defaults, or the defaults alone.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    })
}

fn read_log(path: &Path) -> Result<Vec<ImuSample>> {
    let samples = parse_imu_log(path)?;
    let stats = validate_log(&samples)?;
    if !stats.gaps.is_empty() {
        warn!(
            "{}: {} gap(s) longer than five sample intervals, first before sample {}",
            path.display(),
            stats.gaps.len(),
            stats.gaps[0]
        );
    }
    info!("{}: {} samples at {:.1} Hz", path.display(), samples.len(), stats.rate_hz);
    Ok(samples)
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub log: PathBuf,
    pub config: Option<PathBuf>,
    pub filter: FilterKind,
    pub out: PathBuf,
    pub gt: Option<PathBuf>,
}

/// Runs one filter over a log and writes its trajectory. Returns the metric
/// report when ground truth is given, otherwise an empty string.
pub fn cmd_run(args: &RunArgs) -> Result<String> {
    let cfg = load_run_config(args.config.as_deref())?;
    let samples = read_log(&args.log)?;
    let gt = args.gt.as_deref().map(read_trajectory).transpose()?;
    let run = run_filter(args.filter, &samples, &cfg.settings())?;
    info!("{}: {} updates, {} skipped", args.filter, run.updates, run.skipped_updates);
    write_trajectory(&run.points, &args.out)?;
    match gt {
        Some(gt) => Ok(MetricReport::compute(&run.points, Some(&gt))?.to_kv()),
        None => Ok(String::new()),
    }
}

#[derive(Clone, Debug)]
pub struct CompareArgs {
    pub log: PathBuf,
    pub config: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Runs both filters on the same samples and stance flags, writes
/// `<filter>.csv` per filter and returns a `metric,inekf,ekf` table.
pub fn cmd_compare(args: &CompareArgs) -> Result<String> {
    let cfg = load_run_config(args.config.as_deref())?;
    let samples = read_log(&args.log)?;
    let gt = args.gt.as_deref().map(read_trajectory).transpose()?;
    let settings = cfg.settings();
    let flags = detect_all(&samples, &settings.detector, &settings.noise);
    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;

    let mut reports = Vec::new();
    for kind in FilterKind::ALL {
        let run = run_with_flags(kind, &samples, &flags, &settings)?;
        write_trajectory(&run.points, &args.out_dir.join(format!("{kind}.csv")))?;
        reports.push(MetricReport::compute(&run.points, gt.as_deref())?);
    }

    let mut s = String::from("metric");
    for kind in FilterKind::ALL {
        let _ = write!(s, ",{kind}");
    }
    s.push('\n');
    for (i, (name, _)) in reports[0].fields().iter().enumerate() {
        let values: Vec<Option<f64>> = reports.iter().map(|r| r.fields()[i].1).collect();
        if values.iter().all(Option::is_none) {
            continue;
        }
        s.push_str(name);
        for v in values {
            let _ = write!(s, ",{}", v.map(format_num).unwrap_or_default());
        }
        s.push('\n');
    }
    Ok(s)
}

/// Where a simulated gait comes from.
#[derive(Clone, Debug)]
pub enum GaitSource {
    Scenario(Scenario),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub source: GaitSource,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Overrides the gait's own seed.
    pub seed: Option<u64>,
}

/// Writes `imu.csv`, `gt.csv` and `stance.csv` for a scenario or gait file,
/// corrupted with the configured noise. Returns a short summary.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let cfg = load_run_config(args.config.as_deref())?;
    let (spec, rate_hz) = match &args.source {
        GaitSource::Scenario(s) => (s.spec(), DEFAULT_RATE_HZ),
        GaitSource::File(p) => {
            let g = parse_gait(&KvFile::load(p)?)?;
            (g.spec, g.rate_hz)
        }
    };
    let seed = args.seed.unwrap_or(spec.rng_seed);
    let run = simulate(&spec, rate_hz, &cfg.noise, &ImuBias::default(), seed)?;

    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    write_imu_log(&run.measured, &args.out_dir.join(IMU_FILE))?;
    write_trajectory(&run.truth.points(), &args.out_dir.join(GT_FILE))?;
    let (times, flags) = (run.truth.times(), run.truth.stance_flags());
    write_stance_labels(&times, &flags, &args.out_dir.join(STANCE_FILE))?;

    let events = segment_events(&flags, &times)?;
    let mut s = String::new();
    let _ = writeln!(s, "samples = {}", run.measured.len());
    let _ = writeln!(s, "rate_hz = {}", format_num(rate_hz));
    let _ = writeln!(s, "duration = {}", format_num(spec.total_duration()));
    let _ = writeln!(s, "path_length = {}", format_num(spec.path_length()));
    let _ = writeln!(s, "stance_events = {}", events.len());
    let _ = writeln!(s, "seed = {seed}");
    Ok(s)
}

/// The full effective configuration in config-file syntax.
pub fn cmd_print_config(config: Option<&Path>) -> Result<String> {
    Ok(load_run_config(config)?.dump())
}
