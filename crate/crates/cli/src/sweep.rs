//! Noise-detuning sweep: every filter at every scale factor on the same
//! simulated logs.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use pdr_core::io::{format_num, parse_gait, KvFile, RunConfig};
use pdr_core::metrics::MetricReport;
use pdr_core::runner::{run_filter, FilterKind};
use pdr_core::sim::{simulate, GaitSpec, Scenario, SimRun, DEFAULT_RATE_HZ};
use pdr_core::state::ImuBias;
use rayon::prelude::*;

use crate::{io_err, load_run_config, CliError, Result};

pub const TABLE_HEADER: &str = "filter,target,factor,seed,ate_rmse,loop_err,loop_pct,yaw_drift";

/// Marker written in every metric cell of a run that did not finish.
pub const FAILED: &str = "failed";

/// Which white-noise sigmas a sweep scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Gyro,
    Accel,
    Both,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Gyro, Target::Accel, Target::Both];

    pub fn name(self) -> &'static str {
        match self {
            Target::Gyro => "gyro",
            Target::Accel => "accel",
            Target::Both => "both",
        }
    }

    /// `(gyro, accel)` multipliers for a scale factor.
    pub fn factors(self, f: f64) -> (f64, f64) {
        match self {
            Target::Gyro => (f, 1.0),
            Target::Accel => (1.0, f),
            Target::Both => (f, f),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown target `{s}` (valid choices: gyro, accel, both)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub scale_factors: Vec<f64>,
    pub target: Target,
    /// Label written to logs; a scenario name or the gait file path.
    pub scenario_name: String,
    pub scenario: GaitSpec,
    pub rate_hz: f64,
    pub filters: Vec<FilterKind>,
    pub repetitions: usize,
    /// Repetition `i` uses seed `seed + i`.
    pub seed: u64,
}

impl Default for SweepSpec {
    /// Both filters on the square loop, factors 1 and 10 on both sigmas, 20
    /// seeds.
    fn default() -> Self {
        SweepSpec {
            scale_factors: vec![1.0, 10.0],
            target: Target::Both,
            scenario_name: Scenario::SquareLoop.name().into(),
            scenario: Scenario::SquareLoop.spec(),
            rate_hz: DEFAULT_RATE_HZ,
            filters: FilterKind::ALL.to_vec(),
            repetitions: 20,
            seed: 0,
        }
    }
}

const SWEEP_KEYS: &[&str] = &["factors", "target", "scenario", "gait", "rate_hz", "filters", "repetitions", "seed"];

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CliError::Core(pdr_core::Error::InvalidConfig(m)));
        if self.scale_factors.is_empty() {
            return invalid("sweep needs at least one scale factor".into());
        }
        if let Some(f) = self.scale_factors.iter().find(|f| !(**f > 0.0) || !f.is_finite()) {
            return invalid(format!("scale factors must be finite and > 0, got {f}"));
        }
        if self.filters.is_empty() {
            return invalid("sweep needs at least one filter".into());
        }
        if self.repetitions == 0 {
            return invalid("repetitions must be >= 1".into());
        }
        self.scenario.validate()?;
        Ok(())
    }

    /// Reads a sweep file. `gait` paths are resolved against `base_dir`.
    pub fn from_kv(file: &KvFile, base_dir: &Path) -> Result<Self> {
        let known: [(&str, &[&str]); 1] = [("sweep", SWEEP_KEYS)];
        let mut spec = SweepSpec::default();
        let mut rate_set = false;
        for e in &file.entries {
            file.section_of(e, &known)?;
            match e.key.as_str() {
                "factors" => spec.scale_factors = file.f64_list(e)?,
                "target" => spec.target = e.value.parse().map_err(|_| file.bad_value(e))?,
                "scenario" => {
                    let s: Scenario = e.value.parse().map_err(|_| file.bad_value(e))?;
                    spec.scenario = s.spec();
                    spec.scenario_name = s.name().into();
                }
                "gait" => {
                    let path = base_dir.join(&e.value);
                    let g = parse_gait(&KvFile::load(&path)?)?;
                    spec.scenario = g.spec;
                    if !rate_set {
                        spec.rate_hz = g.rate_hz;
                    }
                    spec.scenario_name = e.value.clone();
                }
                "rate_hz" => {
                    spec.rate_hz = file.f64(e)?;
                    rate_set = true;
                }
                "filters" => {
                    spec.filters = file
                        .list(e)?
                        .iter()
                        .map(|s| s.parse::<FilterKind>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| file.bad_value(e))?;
                }
                "repetitions" => spec.repetitions = file.usize(e)?,
                "seed" => spec.seed = file.u64(e)?,
                _ => return Err(file.unknown(e).into()),
            }
        }
        if file.entries.iter().filter(|e| e.key == "scenario" || e.key == "gait").count() > 1 {
            return Err(CliError::Usage(format!("{}: set only one of `scenario` and `gait`", file.path)));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = KvFile::load(path)?;
        Self::from_kv(&file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(|i| self.seed.wrapping_add(i))
    }
}

/// One filter pass of the sweep. `report` holds the failure message when the
/// run did not finish.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub filter: FilterKind,
    pub target: Target,
    pub factor: f64,
    pub seed: u64,
    pub report: std::result::Result<MetricReport, String>,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let cells = match &self.report {
            Ok(r) => r.csv_cells(),
            Err(_) => std::array::from_fn(|_| FAILED.to_string()),
        };
        format!(
            "{},{},{},{},{}",
            self.filter,
            self.target,
            format_num(self.factor),
            self.seed,
            cells.join(",")
        )
    }
}

/// Simulates one log per seed with the nominal noise, then runs every
/// (filter, factor, seed) cell with the detuned sigmas. Rows come back in
/// filter, factor, seed order whatever the number of threads.
pub fn run_sweep(spec: &SweepSpec, cfg: &RunConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let seeds: Vec<u64> = spec.seeds().collect();
    pool.install(|| {
        let sims: Vec<SimRun> = seeds
            .par_iter()
            .map(|&seed| simulate(&spec.scenario, spec.rate_hz, &cfg.noise, &ImuBias::default(), seed))
            .collect::<pdr_core::Result<_>>()?;
        let n = seeds.len();
        let cells: Vec<(FilterKind, f64, usize)> = spec
            .filters
            .iter()
            .flat_map(|&k| spec.scale_factors.iter().flat_map(move |&f| (0..n).map(move |i| (k, f, i))))
            .collect();
        let rows = cells
            .par_iter()
            .map(|&(filter, factor, i)| {
                let (gf, af) = spec.target.factors(factor);
                let mut settings = cfg.settings();
                settings.noise = cfg.noise.detuned(gf, af);
                let gt = sims[i].truth.points();
                let report = run_filter(filter, &sims[i].measured, &settings)
                    .and_then(|run| MetricReport::compute(&run.points, Some(&gt)))
                    .map_err(|e| e.to_string());
                SweepRow { filter, target: spec.target, factor, seed: seeds[i], report }
            })
            .collect();
        Ok(rows)
    })
}

pub fn format_table(rows: &[SweepRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median statistics of one (filter, factor) cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSummary {
    pub filter: FilterKind,
    pub factor: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub median_loop_err: Option<f64>,
    pub median_ate: Option<f64>,
}

/// Per-cell medians in row order.
pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    for chunk in rows.chunk_by(|a, b| a.filter == b.filter && a.factor == b.factor) {
        let ok: Vec<&MetricReport> = chunk.iter().filter_map(|r| r.report.as_ref().ok()).collect();
        out.push(CellSummary {
            filter: chunk[0].filter,
            factor: chunk[0].factor,
            succeeded: ok.len(),
            failed: chunk.len() - ok.len(),
            median_loop_err: median(ok.iter().map(|r| r.final_loop_error).collect()),
            median_ate: median(ok.iter().filter_map(|r| r.ate_rmse).collect()),
        });
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub spec: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// Overrides the sweep file's base seed.
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
}

/// Runs a sweep file, writes the row table and returns per-cell medians.
/// Fails after writing the table if some cell has no successful run.
pub fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    let mut spec = SweepSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let cfg = load_run_config(args.config.as_deref())?;
    info!(
        "sweep: {} on {}, factors {:?}, {} repetitions",
        spec.target, spec.scenario_name, spec.scale_factors, spec.repetitions
    );
    let rows = run_sweep(&spec, &cfg, args.jobs)?;
    fs::write(&args.out, format_table(&rows)).map_err(io_err(&args.out))?;

    let mut s = String::from("filter,factor,ok,failed,median_loop_err,median_ate_rmse\n");
    let mut empty = Vec::new();
    for c in summarize(&rows) {
        let cell = |v: Option<f64>| v.map(format_num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.filter,
            format_num(c.factor),
            c.succeeded,
            c.failed,
            cell(c.median_loop_err),
            cell(c.median_ate)
        );
        if c.failed > 0 {
            warn!("{} at factor {}: {} of {} runs failed", c.filter, c.factor, c.failed, c.failed + c.succeeded);
        }
        if c.succeeded == 0 {
            empty.push(format!("{} x{}", c.filter, format_num(c.factor)));
        }
    }
    if !empty.is_empty() {
        return Err(CliError::Numeric(format!("no run succeeded for {}", empty.join(", "))));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SweepSpec> {
        SweepSpec::from_kv(&KvFile::parse(text, "test.sweep")?, Path::new("."))
    }

    #[test]
    fn empty_file_is_the_default_sweep() {
        let s = parse("").unwrap();
        assert_eq!(s, SweepSpec::default());
        assert_eq!(s.scale_factors, [1.0, 10.0]);
        assert_eq!(s.seeds().collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn keys_override_defaults() {
        let s = parse("[sweep]\ntarget = accel\nfactors = [0.5, 2]\nfilters = [ekf]\nscenario = line\nrepetitions = 3\nseed = 7\n")
            .unwrap();
        assert_eq!(s.target, Target::Accel);
        assert_eq!(s.scale_factors, [0.5, 2.0]);
        assert_eq!(s.filters, [FilterKind::Ekf]);
        assert_eq!(s.scenario, Scenario::Line.spec());
        assert_eq!(s.seeds().collect::<Vec<_>>(), [7, 8, 9]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(parse("factors = []").is_err());
        assert!(parse("factors = [1, 0]").is_err());
        assert!(parse("factors = [1, -2]").is_err());
        assert!(parse("filters = []").is_err());
        assert!(parse("repetitions = 0").is_err());
        assert!(parse("scenario = line\nscenario = stairs").is_err());
        assert!(parse("scenario = line\ngait = g.gait").is_err());
        let e = parse("target = roll").unwrap_err().to_string();
        assert!(e.contains("target") && e.contains(":1:"), "{e}");
        let e = parse("filters = [inekf, ukf]").unwrap_err().to_string();
        assert!(e.contains("filters"), "{e}");
        let e = parse("speed = 3").unwrap_err().to_string();
        assert!(e.contains("speed"), "{e}");
    }

    #[test]
    fn gait_file_is_resolved_against_spec_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("g.gait"), "base = line\nn_steps = 4\nrate_hz = 200\n").unwrap();
        fs::write(dir.path().join("s.sweep"), "gait = g.gait\n").unwrap();
        let s = SweepSpec::load(&dir.path().join("s.sweep")).unwrap();
        assert_eq!(s.scenario.n_steps, 4);
        assert_eq!(s.rate_hz, 200.0);
        fs::write(dir.path().join("s.sweep"), "rate_hz = 50\ngait = g.gait\n").unwrap();
        assert_eq!(SweepSpec::load(&dir.path().join("s.sweep")).unwrap().rate_hz, 50.0);
    }

    #[test]
    fn target_factors() {
        assert_eq!(Target::Gyro.factors(10.0), (10.0, 1.0));
        assert_eq!(Target::Accel.factors(10.0), (1.0, 10.0));
        assert_eq!(Target::Both.factors(10.0), (10.0, 10.0));
        assert_eq!("both".parse::<Target>(), Ok(Target::Both));
    }

    #[test]
    fn rows_format_and_summarize() {
        let report = MetricReport {
            ate_rmse: Some(0.25),
            final_loop_error: 0.5,
            loop_error_pct_path: Some(1.5),
            yaw_drift: Some(-0.125),
            mean_stance_speed: None,
            path_length: 28.0,
        };
        let ok = SweepRow { filter: FilterKind::Inekf, target: Target::Gyro, factor: 10.0, seed: 3, report: Ok(report) };
        assert_eq!(ok.to_csv(), "inekf,gyro,10,3,0.25,0.5,1.5,-0.125");
        let bad = SweepRow { report: Err("boom".into()), seed: 4, ..ok.clone() };
        assert_eq!(bad.to_csv(), "inekf,gyro,10,4,failed,failed,failed,failed");
        let table = format_table(&[ok.clone(), bad.clone()]);
        assert!(table.starts_with(TABLE_HEADER));
        assert_eq!(table.lines().count(), 3);

        let mut other = ok.clone();
        other.factor = 1.0;
        let cells = summarize(&[ok, bad, other]);
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].succeeded, cells[0].failed), (1, 1));
        assert_eq!(cells[0].median_loop_err, Some(0.5));
        assert_eq!(cells[1].factor, 1.0);
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = SweepSpec {
            scenario: GaitSpec::walking(4, Vec::new()),
            repetitions: 3,
            ..SweepSpec::default()
        };
        let cfg = RunConfig::default();
        let a = format_table(&run_sweep(&spec, &cfg, 1).unwrap());
        let b = format_table(&run_sweep(&spec, &cfg, 4).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 2 * 2 * 3);
    }
}
