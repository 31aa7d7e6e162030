//! Parameter sweeps over N, β and redundancy mode, and their CSV output.
//!
//! `raw.csv` has one row per (point, seed) and `aggregate.csv` one row per
//! point. Both start with a `schema` column holding [`SCHEMA_VERSION`]. Rows
//! are ordered by mode, then β, then N, then seed, regardless of how many
//! threads ran the sweep.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use csesim_core::rng::StreamDigest;
use csesim_core::tx_pipeline::RedundancyMode;
use csesim_core::{run_simulation, ConfigError, MetricName, MetricsReport, RunCounts, SimConfig, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Axes of a sweep. An empty axis keeps the value from the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_vehicles: Vec<usize>,
    pub beta: Vec<f64>,
    pub mode: Vec<RedundancyMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_vehicles: usize,
    pub beta: f64,
    pub mode: RedundancyMode,
}

impl SweepPoint {
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        c.n_vehicles = self.n_vehicles;
        c.pipeline.beta = self.beta;
        c.pipeline.redundancy = self.mode;
        c
    }

    fn dir_name(&self) -> String {
        format!("{}_beta{}_n{}", mode_str(self.mode), self.beta, self.n_vehicles)
    }
}

fn or_default<T: Copy>(values: &[T], default: T) -> Vec<T> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

impl SweepSpec {
    /// The N grid used for every density sweep: 50 to 400 in steps of 50.
    pub fn default_n_grid() -> Vec<usize> {
        (1..=8).map(|k| 50 * k).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(&n) = self.n_vehicles.iter().find(|&&n| n < 2) {
            return Err(ConfigError::new("sweep.n_vehicles", format!("values must be at least 2, got {n}")));
        }
        if let Some(&b) = self.beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(ConfigError::new("sweep.beta", format!("values must lie in [0, 1], got {b}")));
        }
        Ok(())
    }

    /// Cross product of the axes, mode outermost and N innermost.
    pub fn points(&self, base: &SimConfig) -> Vec<SweepPoint> {
        let ns = or_default(&self.n_vehicles, base.n_vehicles);
        let betas = or_default(&self.beta, base.pipeline.beta);
        let modes = or_default(&self.mode, base.pipeline.redundancy);
        let mut out = Vec::with_capacity(ns.len() * betas.len() * modes.len());
        for &mode in &modes {
            for &beta in &betas {
                for &n_vehicles in &ns {
                    out.push(SweepPoint { n_vehicles, beta, mode });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Worker threads; `None` lets rayon decide.
    pub parallelism: Option<usize>,
    /// Where to write per-run JSON-lines records, if at all.
    pub record_dir: Option<PathBuf>,
}

/// One finished run. Failed runs keep their error text and no counts.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: Result<RunCounts, String>,
    pub digests: Vec<(Stream, StreamDigest)>,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub runs: Vec<SeedRun>,
    /// Pooled over the successful runs.
    pub report: MetricsReport,
}

impl PointResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn counts(&self) -> impl Iterator<Item = &RunCounts> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.points.iter().map(PointResult::failures).sum()
    }

    pub fn point(&self, n_vehicles: usize, beta: f64, mode: RedundancyMode) -> Option<&PointResult> {
        self.points.iter().find(|p| p.point.n_vehicles == n_vehicles && p.point.beta == beta && p.point.mode == mode)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Run every (point, seed) of the sweep. Individual run failures are kept in
/// the result rather than aborting the sweep.
pub fn execute(base: &SimConfig, sweep: &SweepSpec, opts: &SweepOptions) -> Result<SweepResult, SweepError> {
    base.validate()?;
    sweep.validate()?;
    let points = sweep.points(base);
    let configs: Vec<SimConfig> = points.iter().map(|p| p.apply(base)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|i| base.seeds.iter().map(move |&s| (i, s))).collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.parallelism {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let runs: Vec<SeedRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| run_one(&configs[i], &points[i], seed, opts.record_dir.as_deref()))
            .collect()
    });

    let mut runs = runs.into_iter();
    let points = points
        .into_iter()
        .map(|point| {
            let runs: Vec<SeedRun> = runs.by_ref().take(base.seeds.len()).collect();
            let ok: Vec<RunCounts> = runs.iter().filter_map(|r| r.outcome.clone().ok()).collect();
            PointResult { point, report: MetricsReport::aggregate(&ok), runs }
        })
        .collect();
    Ok(SweepResult { points })
}

fn run_one(config: &SimConfig, point: &SweepPoint, seed: u64, record_dir: Option<&Path>) -> SeedRun {
    let result = match record_dir {
        None => run_simulation(config, seed, None).map_err(|e| e.to_string()),
        Some(dir) => {
            let dir = dir.join(point.dir_name());
            fs::create_dir_all(&dir)
                .and_then(|_| File::create(dir.join(format!("seed{seed}.jsonl"))))
                .map_err(|e| e.to_string())
                .and_then(|f| {
                    let mut w = BufWriter::new(f);
                    let out = run_simulation(config, seed, Some(&mut w)).map_err(|e| e.to_string())?;
                    w.flush().map_err(|e| e.to_string())?;
                    Ok(out)
                })
        }
    };
    match result {
        Ok(out) => SeedRun { seed, outcome: Ok(out.counts), digests: out.digests },
        Err(e) => {
            log::warn!("{} seed {seed} failed: {e}", point.dir_name());
            SeedRun { seed, outcome: Err(e), digests: Vec::new() }
        }
    }
}

/// Run the sweep and write `raw.csv` and `aggregate.csv` into `out_dir`.
pub fn run_sweep(base: &SimConfig, sweep: &SweepSpec, opts: &SweepOptions, out_dir: &Path) -> Result<SweepResult, SweepError> {
    let result = execute(base, sweep, opts)?;
    fs::create_dir_all(out_dir)?;
    write_raw(&result, File::create(out_dir.join("raw.csv"))?)?;
    write_aggregate(&result, File::create(out_dir.join("aggregate.csv"))?)?;
    Ok(result)
}

const COUNT_COLUMNS: [&str; 18] = [
    "measurement_epochs",
    "generated",
    "dropped",
    "transmitted",
    "messages_with_cse",
    "cse_events",
    "redundancy_cse",
    "relevance_cse",
    "recovery_attempts",
    "recovery_successes",
    "arr_available",
    "arr_relevant",
    "transmitted_variables",
    "rebroadcasts",
    "rebroadcast_targets",
    "useless_rebroadcast_targets",
    "truncated_variables",
    "truncation_omissions",
];

fn count_values(c: &RunCounts) -> [u64; 18] {
    [
        c.measurement_epochs,
        c.generated,
        c.dropped,
        c.transmitted,
        c.messages_with_cse,
        c.cse_events,
        c.redundancy_cse,
        c.relevance_cse,
        c.recovery_attempts,
        c.recovery_successes,
        c.arr_available,
        c.arr_relevant,
        c.transmitted_variables,
        c.rebroadcasts,
        c.rebroadcast_targets,
        c.useless_rebroadcast_targets,
        c.truncated_variables,
        c.truncation_omissions,
    ]
}

pub fn mode_str(mode: RedundancyMode) -> &'static str {
    match mode {
        RedundancyMode::Hard => "hard",
        RedundancyMode::Soft => "soft",
        RedundancyMode::Off => "off",
    }
}

pub fn parse_mode(s: &str) -> Option<RedundancyMode> {
    [RedundancyMode::Hard, RedundancyMode::Soft, RedundancyMode::Off].into_iter().find(|&m| mode_str(m) == s)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn point_fields(p: &SweepPoint) -> [String; 4] {
    [SCHEMA_VERSION.to_string(), p.n_vehicles.to_string(), p.beta.to_string(), mode_str(p.mode).to_string()]
}

pub fn raw_header() -> Vec<String> {
    let mut h: Vec<String> = ["schema", "n_vehicles", "beta", "mode", "seed", "status", "error"].map(String::from).to_vec();
    h.extend(COUNT_COLUMNS.map(String::from));
    h.push("mean_cbr".into());
    h.extend(MetricName::ALL.map(|m| m.as_str().to_string()));
    h
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["schema", "n_vehicles", "beta", "mode", "seeds_ok", "seeds_failed", "mean_cbr"].map(String::from).to_vec();
    for m in MetricName::ALL {
        let m = m.as_str();
        h.extend([m.to_string(), format!("{m}_ci_low"), format!("{m}_ci_high")]);
    }
    h
}

pub fn write_raw(result: &SweepResult, out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(raw_header())?;
    for p in &result.points {
        for run in &p.runs {
            let mut row: Vec<String> = point_fields(&p.point).to_vec();
            row.push(run.seed.to_string());
            match &run.outcome {
                Ok(c) => {
                    row.extend(["ok".to_string(), String::new()]);
                    row.extend(count_values(c).map(|v| v.to_string()));
                    let r = MetricsReport::finalize(c.clone());
                    row.push(opt(r.mean_cbr));
                    row.extend(MetricName::ALL.map(|m| opt(r.metric(m).mean)));
                }
                Err(e) => {
                    row.extend(["error".to_string(), e.clone()]);
                    row.resize(raw_header().len(), String::new());
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(result: &SweepResult, out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(aggregate_header())?;
    for p in &result.points {
        let mut row: Vec<String> = point_fields(&p.point).to_vec();
        let failed = p.failures();
        row.extend([(p.runs.len() - failed).to_string(), failed.to_string(), opt(p.report.mean_cbr)]);
        for m in MetricName::ALL {
            let m = p.report.metric(m);
            row.extend([opt(m.mean), opt(m.ci_low), opt(m.ci_high)]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_follow_axis_order() {
        let base = SimConfig::default();
        let s = SweepSpec { n_vehicles: vec![50, 100], beta: vec![], mode: vec![RedundancyMode::Hard, RedundancyMode::Soft] };
        let pts = s.points(&base);
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[1].n_vehicles, pts[1].mode), (100, RedundancyMode::Hard));
        assert_eq!((pts[2].n_vehicles, pts[2].mode), (50, RedundancyMode::Soft));
        assert!(pts.iter().all(|p| p.beta == base.pipeline.beta));
    }

    #[test]
    fn sweep_rejects_tiny_n() {
        let s = SweepSpec { n_vehicles: vec![1], ..Default::default() };
        assert_eq!(s.validate().unwrap_err().key, "sweep.n_vehicles");
    }

    #[test]
    fn default_density_grid_gives_expected_row_count() {
        let mut base = SimConfig::default();
        base.seeds = (1..=20).collect();
        let s = SweepSpec { n_vehicles: SweepSpec::default_n_grid(), beta: vec![0.0], mode: vec![RedundancyMode::Hard, RedundancyMode::Soft] };
        assert_eq!(s.points(&base).len() * base.seeds.len(), 320);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [RedundancyMode::Hard, RedundancyMode::Soft, RedundancyMode::Off] {
            assert_eq!(parse_mode(mode_str(m)), Some(m));
        }
        assert_eq!(parse_mode("medium"), None);
    }
}
