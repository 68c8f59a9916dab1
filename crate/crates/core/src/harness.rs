//! Replicated experiments: configuration, per-replicate loops, summaries and
//! reproducibility manifests.
//!
//! One experiment runs `replicates` independent sequential designs of the
//! same problem and method. Replicate `k` draws every random stream from
//! `seeds::derive(seed, k)`, so any replicate can be rerun alone.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch::{BatchConfig, MhConfig};
use crate::cokriging::{CokrigingOptions, MultiFidelityData};
use crate::criteria::{CandidateGrid, Criterion};
use crate::design::{lhs_maximin, nested_pair, DEFAULT_LHS_ITERS};
use crate::error::{Error, Result};
use crate::kernels::{design_matrix, KernelFamily, TrendKind};
use crate::loocv::csv_io;
use crate::mf_sequential::{
    step_batch, step_kriging, step_kriging_batch, step_one_point, IterationRecord, Proxy, SequentialState,
    StepOutcome,
};
use crate::mle::MleConfig;
use crate::problems::{problem, BenchmarkProblem, TestSet};
use crate::seeds;

pub const MANIFEST_SCHEMA: &str = "seqdesign-manifest/1";
pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_COLUMNS: [&str; 6] = [
    "iteration",
    "spent_time",
    "mean_nrmse",
    "q10_nrmse",
    "q90_nrmse",
    "mean_accurate_run_fraction",
];

/// Replicate count used by default and under `paper_scale`.
pub const DESK_REPLICATES: usize = 20;
pub const FULL_SCALE_REPLICATES: usize = 50;

/// A sequential method: a kriging criterion or a co-kriging proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Kriging(Criterion),
    Cokriging(Proxy),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Kriging(Criterion::MaxVar),
        Method::Kriging(Criterion::MinImse),
        Method::Kriging(Criterion::KleiCrit),
        Method::Kriging(Criterion::AdjMmse),
        Method::Cokriging(Proxy::Plain),
        Method::Cokriging(Proxy::Adjusted),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kriging(c) => c.name(),
            Method::Cokriging(Proxy::Plain) => "cokriging",
            Method::Cokriging(Proxy::Adjusted) => "cokriging-adj",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Method::Kriging(c) => c.description(),
            Method::Cokriging(Proxy::Plain) => "multi-fidelity level selection on raw co-kriging variances",
            Method::Cokriging(Proxy::Adjusted) => {
                "multi-fidelity level selection on LOO-CV adjusted variances; batch rounds with budget allocation"
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    OnePoint,
    Batch,
}

/// Optional overrides of the Metropolis-Hastings settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhOverrides {
    pub n_samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub target_acceptance: Option<f64>,
}

/// Experiment description, read from JSON.
///
/// ```json
/// {
///   "problem": "tank-r1",
///   "criterion": "cokriging-adj",
///   "mode": "one-point",
///   "replicates": 20,
///   "initial": [20, 10],
///   "budget": 60,
///   "seed": 1
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name from [`crate::problems::PROBLEM_NAMES`].
    pub problem: String,
    /// Name of a [`Method`].
    pub criterion: String,
    #[serde(default)]
    pub mode: Mode,
    /// Points per batch for kriging, time budget per round for co-kriging.
    #[serde(default)]
    pub q: Option<u64>,
    /// Defaults to 20, or 50 under `paper_scale`.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Initial design size per level, coarsest first.
    pub initial: Vec<usize>,
    /// Total time budget of the sequential phase.
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
    /// Use only the accurate code (sequential kriging on a multi-level
    /// problem); the initial design is the accurate level's.
    #[serde(default)]
    pub accurate_only: bool,
    #[serde(default)]
    pub mh: MhOverrides,
    /// Cluster-count scan ceiling; `3q` when absent.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Likelihood optimizer starts per fit.
    #[serde(default)]
    pub mle_starts: Option<usize>,
    #[serde(default = "default_trend")]
    pub trend: TrendKind,
    #[serde(default = "default_family")]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub paper_scale: bool,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trend() -> TrendKind {
    TrendKind::Constant
}

fn default_family() -> KernelFamily {
    KernelFamily::SquaredExponential
}

/// Likelihood starts per fit when the config does not say.
pub const DEFAULT_MLE_STARTS: usize = 3;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(out), Some(dir)) = (&cfg.output, path.parent()) {
            if out.is_relative() {
                cfg.output = Some(dir.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn replicate_count(&self) -> usize {
        self.replicates
            .unwrap_or(if self.paper_scale { FULL_SCALE_REPLICATES } else { DESK_REPLICATES })
    }

    pub fn batch_config(&self) -> BatchConfig {
        let base = if self.paper_scale {
            MhConfig::paper_scale()
        } else {
            MhConfig::default()
        };
        BatchConfig {
            mh: MhConfig {
                n_samples: self.mh.n_samples.unwrap_or(base.n_samples),
                burn_in: self.mh.burn_in.unwrap_or(base.burn_in),
                target_acceptance: self.mh.target_acceptance.unwrap_or(base.target_acceptance),
                ..base
            },
            n_max: self.n_max,
        }
    }

    pub fn method(&self) -> Result<Method> {
        self.criterion.parse()
    }

    /// Problem as run, after `accurate_only`.
    pub fn resolved_problem(&self) -> Result<BenchmarkProblem> {
        let p = problem(&self.problem)?;
        Ok(if self.accurate_only { p.top_level_only() } else { p })
    }

    /// Checks names, sizes and method/mode compatibility.
    pub fn validate(&self) -> Result<()> {
        let full = problem(&self.problem)?;
        let method = self.method()?;
        let p = self.resolved_problem()?;
        if self.replicate_count() == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.initial.len() != full.n_levels() {
            return Err(Error::Config(format!(
                "`initial` has {} sizes for a {}-level problem",
                self.initial.len(),
                full.n_levels()
            )));
        }
        if self.initial.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config("initial sizes must not grow with the level".into()));
        }
        if self.initial.last().is_some_and(|&n| n < 4) {
            return Err(Error::Config("the accurate level needs at least 4 initial points".into()));
        }
        match (method, p.n_levels()) {
            (Method::Kriging(_), 1) | (Method::Cokriging(_), _) => {}
            (Method::Kriging(c), s) => {
                return Err(Error::Config(format!(
                    "{c} needs a single-level problem; {} has {s} levels (set accurate_only)",
                    self.problem
                )))
            }
        }
        if self.mode == Mode::Batch {
            match method {
                Method::Kriging(Criterion::KleiCrit) => {
                    return Err(Error::Config("kleicrit has no batch variant".into()))
                }
                Method::Cokriging(Proxy::Plain) => {
                    return Err(Error::Config("batch co-kriging uses `cokriging-adj`".into()))
                }
                _ => {}
            }
            if self.q.unwrap_or(0) == 0 {
                return Err(Error::Config("batch mode needs q ≥ 1".into()));
            }
        }
        if self.mle_starts == Some(0) {
            return Err(Error::Config("mle_starts must be at least 1".into()));
        }
        self.batch_config().mh.validate()
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    /// Failure reason; `None` for a completed replicate.
    pub failure: Option<String>,
    pub iterations: Vec<IterationRecord>,
    /// Seconds elapsed at each logged iteration.
    pub wall_clock: Vec<f64>,
}

/// One row of the replicate summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub spent_time: u64,
    pub mean_nrmse: f64,
    pub q10_nrmse: f64,
    pub q90_nrmse: f64,
    pub mean_accurate_run_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
    pub levels: usize,
}

impl ExperimentResult {
    pub fn completed(&self) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(|r| r.failure.is_none())
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }

    /// Last summary row with `spent_time ≤ t`.
    pub fn row_at(&self, t: u64) -> Option<&SummaryRow> {
        self.summary.iter().take_while(|r| r.spent_time <= t).last()
    }

    /// Final NRMSE of every completed replicate, in replicate order.
    pub fn final_nrmse(&self) -> Vec<f64> {
        self.completed()
            .filter_map(|r| r.iterations.last().and_then(|it| it.nrmse))
            .collect()
    }
}

/// Initial nested designs in the unit cube, coarsest first.
///
/// The accurate level is a maximin LHS; each coarser design extends the
/// next finer one by [`nested_pair`].
pub fn initial_designs(sizes: &[usize], d: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let top = *sizes
        .last()
        .ok_or_else(|| Error::Config("empty initial design sizes".into()))?;
    let fine = lhs_maximin(top, d, DEFAULT_LHS_ITERS, seeds::derive(seed, seeds::TAG_DESIGN))?.points;
    let mut sets = vec![fine];
    for (k, &n) in sizes.iter().enumerate().rev().skip(1) {
        let finer = sets.last().expect("at least one level");
        let nested_seed = seeds::derive(seeds::derive(seed, seeds::TAG_NESTED), k as u64);
        let next = if n == finer.len() {
            finer.clone()
        } else {
            nested_pair(finer, n, nested_seed)?.coarse
        };
        sets.push(next);
    }
    sets.reverse();
    Ok(sets)
}

fn initial_data(p: &BenchmarkProblem, designs: &[Vec<Vec<f64>>]) -> Result<MultiFidelityData> {
    let mut mats = Vec::with_capacity(designs.len());
    let mut outputs = Vec::with_capacity(designs.len());
    for (l, pts) in designs.iter().enumerate() {
        mats.push(design_matrix(pts)?);
        outputs.push(pts.iter().map(|u| p.eval_unit(l + 1, u)).collect::<Result<Vec<_>>>()?);
    }
    MultiFidelityData::new(mats, outputs)
}

/// Runs replicate `k` to budget exhaustion.
pub fn run_replicate(cfg: &ExperimentConfig, test: &TestSet, k: usize) -> ReplicateRecord {
    let seed = seeds::derive(cfg.seed, k as u64);
    let start = Instant::now();
    let mut wall_clock = Vec::new();
    let mut iterations = Vec::new();
    let failure = replicate_loop(cfg, test, seed, &mut |log: &[IterationRecord]| {
        while wall_clock.len() < log.len() {
            wall_clock.push(start.elapsed().as_secs_f64());
        }
        iterations = log.to_vec();
    })
    .err()
    .map(|e| e.to_string());
    if let Some(reason) = &failure {
        log::warn!("replicate {k} failed: {reason}");
    }
    ReplicateRecord {
        replicate: k,
        seed,
        failure,
        iterations,
        wall_clock,
    }
}

fn replicate_loop(
    cfg: &ExperimentConfig,
    test: &TestSet,
    seed: u64,
    observe: &mut dyn FnMut(&[IterationRecord]),
) -> Result<()> {
    let method = cfg.method()?;
    let p = cfg.resolved_problem()?;
    let sizes = &cfg.initial;
    let mut designs = initial_designs(sizes, p.dim(), seed)?;
    if cfg.accurate_only {
        designs = designs.split_off(designs.len() - 1);
    }
    let data = initial_data(&p, &designs)?;
    let grid = CandidateGrid::standard(p.dim(), seeds::derive(seed, seeds::TAG_GRID))?;
    let opts = CokrigingOptions {
        trends: vec![cfg.trend],
        family: cfg.kernel,
        mle: MleConfig {
            starts: cfg.mle_starts.unwrap_or(DEFAULT_MLE_STARTS),
            ..MleConfig::default()
        },
        seed: seeds::derive(seed, seeds::TAG_FIT),
    };
    let batch = cfg.batch_config();
    let mut state = SequentialState::new(p, data, opts, grid, Some(test.clone()))?;
    observe(state.log());
    let q = cfg.q.unwrap_or(1);
    loop {
        let advanced = match (method, cfg.mode) {
            (Method::Kriging(c), Mode::OnePoint) => step_kriging(&mut state, c, cfg.budget)?,
            (Method::Kriging(c), Mode::Batch) => step_kriging_batch(&mut state, c, q as usize, &batch, cfg.budget)?,
            (Method::Cokriging(proxy), Mode::OnePoint) => step_one_point(&mut state, proxy, cfg.budget)?,
            (Method::Cokriging(_), Mode::Batch) => match step_batch(&mut state, q, &batch, cfg.budget)? {
                Some(_) => StepOutcome::Advanced,
                None => StepOutcome::Exhausted,
            },
        } == StepOutcome::Advanced;
        observe(state.log());
        if !advanced || state.spent() >= cfg.budget {
            return Ok(());
        }
    }
}

/// Runs every replicate (in parallel) and summarizes the completed ones.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let p = cfg.resolved_problem()?;
    let test = p.test_set()?;
    let records: Vec<ReplicateRecord> = (0..cfg.replicate_count())
        .into_par_iter()
        .map(|k| run_replicate(cfg, &test, k))
        .collect();
    let levels = p.n_levels();
    let summary = summarize(&records, levels);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        summary,
        levels,
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// (`(n-1)p` positions).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-time summary over completed replicates.
///
/// Rows sit at every spent time reached by some replicate. Each replicate
/// contributes its last record at or before that time.
pub fn summarize(records: &[ReplicateRecord], levels: usize) -> Vec<SummaryRow> {
    let done: Vec<&ReplicateRecord> = records
        .iter()
        .filter(|r| r.failure.is_none() && !r.iterations.is_empty())
        .collect();
    let mut times: Vec<u64> = done.iter().flat_map(|r| r.iterations.iter().map(|i| i.spent)).collect();
    times.sort_unstable();
    times.dedup();
    let mut rows = Vec::with_capacity(times.len());
    for (iteration, &t) in times.iter().enumerate() {
        let at: Vec<&IterationRecord> = done
            .iter()
            .map(|r| r.iterations.iter().take_while(|i| i.spent <= t).last().expect("iteration 0 at time 0"))
            .collect();
        let mut nrmse: Vec<f64> = at.iter().filter_map(|i| i.nrmse).collect();
        if nrmse.is_empty() {
            continue;
        }
        nrmse.sort_by(f64::total_cmp);
        let n = at.len() as f64;
        rows.push(SummaryRow {
            iteration,
            spent_time: t,
            mean_nrmse: nrmse.iter().sum::<f64>() / nrmse.len() as f64,
            q10_nrmse: quantile(&nrmse, 0.1),
            q90_nrmse: quantile(&nrmse, 0.9),
            mean_accurate_run_fraction: at.iter().map(|i| i.accurate_fraction(levels)).sum::<f64>() / n,
        });
    }
    rows
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.spent_time.to_string(),
            fmt_f64(r.mean_nrmse),
            fmt_f64(r.q10_nrmse),
            fmt_f64(r.q90_nrmse),
            fmt_f64(r.mean_accurate_run_fraction),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-replicate iteration logs, one row per simulated point.
pub fn write_runs_csv(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["replicate", "iteration", "point", "levels", "criterion", "spent_time", "nrmse", "status"])?;
    for rec in records {
        let status = if rec.failure.is_some() { "failed" } else { "completed" };
        for it in &rec.iterations {
            let nrmse = it.nrmse.map(fmt_f64).unwrap_or_default();
            let base = [rec.replicate.to_string(), it.iteration.to_string()];
            if it.runs.is_empty() {
                w.write_record(base.iter().cloned().chain([
                    String::new(),
                    String::new(),
                    String::new(),
                    it.spent.to_string(),
                    nrmse.clone(),
                    status.to_string(),
                ]))?;
            }
            for run in &it.runs {
                let point = run.point.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
                let levels = run.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";");
                w.write_record(base.iter().cloned().chain([
                    point,
                    levels,
                    fmt_f64(run.criterion),
                    it.spent.to_string(),
                    nrmse.clone(),
                    status.to_string(),
                ]))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateManifest {
    pub replicate: usize,
    pub seed: u64,
    pub failure: Option<String>,
    pub iterations: usize,
    /// Seconds elapsed at each logged iteration.
    pub wall_clock: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub replicates: Vec<ReplicateManifest>,
    pub completed: usize,
    pub failed: usize,
    /// SHA-256 of each CSV file by file name.
    pub checksums: Vec<(String, String)>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!("unsupported manifest schema `{}`", m.schema)));
        }
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `runs.csv`, `summary.csv` and `manifest.json` into `dir`.
pub fn emit_summary(result: &ExperimentResult, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let runs = dir.join(RUNS_FILE);
    let summary = dir.join(SUMMARY_FILE);
    write_runs_csv(&runs, &result.records)?;
    write_summary_csv(&summary, &result.summary)?;
    let mut config = result.config.clone();
    config.output = None;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        replicates: result
            .records
            .iter()
            .map(|r| ReplicateManifest {
                replicate: r.replicate,
                seed: r.seed,
                failure: r.failure.clone(),
                iterations: r.iterations.len(),
                wall_clock: r.wall_clock.clone(),
            })
            .collect(),
        completed: result.records.len() - result.failures(),
        failed: result.failures(),
        checksums: vec![
            (RUNS_FILE.into(), sha256_file(&runs)?),
            (SUMMARY_FILE.into(), sha256_file(&summary)?),
        ],
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Outcome of rerunning a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub output: PathBuf,
    /// `(file, recorded digest, replayed digest)`.
    pub files: Vec<(String, String, String)>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.files.iter().all(|(_, a, b)| a == b)
    }
}

/// Reruns the experiment recorded in `manifest_path` into `output` (default:
/// a `replay` directory next to the manifest) and compares CSV digests.
pub fn replay(manifest_path: &Path, output: Option<&Path>) -> Result<ReplayReport> {
    let manifest = Manifest::load(manifest_path)?;
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    let result = run_experiment(&manifest.config)?;
    let replayed = emit_summary(&result, &out)?;
    let files = manifest
        .checksums
        .iter()
        .map(|(name, digest)| {
            let now = replayed
                .checksums
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.clone())
                .unwrap_or_default();
            (name.clone(), digest.clone(), now)
        })
        .collect();
    Ok(ReplayReport { output: out, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(criterion: &str, budget: u64) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"problem": "ackley", "criterion": "{criterion}", "replicates": 2,
                "initial": [6], "budget": {budget}, "seed": 5, "mle_starts": 2}}"#
        ))
        .unwrap()
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0];
        assert_eq!(quantile(&v, 0.1), 2.0);
        assert_eq!(quantile(&v, 0.9), 10.0);
        assert!((quantile(&[1.0, 2.0], 0.25) - 1.25).abs() < 1e-15);
        assert_eq!(quantile(&[3.0], 0.9), 3.0);
    }

    #[test]
    fn zero_budget_gives_initial_nrmse_only() {
        let mut cfg = config("maxvar", 0);
        cfg.replicates = Some(1);
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.summary.len(), 1);
        let row = &result.summary[0];
        assert_eq!(row.spent_time, 0);
        assert_eq!(row.mean_nrmse, result.records[0].iterations[0].nrmse.unwrap());
        assert_eq!(row.mean_accurate_run_fraction, 1.0);
    }

    #[test]
    fn empty_records_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let result = ExperimentResult {
            config: config("maxvar", 0),
            records: Vec::new(),
            summary: summarize(&[], 1),
            levels: 1,
        };
        let m = emit_summary(&result, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(text.trim_end(), SUMMARY_COLUMNS.join(","));
        assert_eq!(m.completed, 0);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn summary_carries_last_values_forward() {
        let rec = |k: usize, spent: &[u64], nrmse: &[f64]| ReplicateRecord {
            replicate: k,
            seed: 0,
            failure: None,
            iterations: spent
                .iter()
                .zip(nrmse)
                .enumerate()
                .map(|(i, (&s, &e))| IterationRecord {
                    iteration: i,
                    runs: Vec::new(),
                    spent: s,
                    nrmse: Some(e),
                    accurate_points: i / 2,
                    new_points: i,
                })
                .collect(),
            wall_clock: Vec::new(),
        };
        let records = vec![rec(0, &[0, 1, 11], &[1.0, 0.8, 0.5]), rec(1, &[0, 10], &[0.9, 0.7])];
        let rows = summarize(&records, 2);
        let times: Vec<u64> = rows.iter().map(|r| r.spent_time).collect();
        assert_eq!(times, vec![0, 1, 10, 11]);
        assert!((rows[1].mean_nrmse - 0.85).abs() < 1e-15);
        assert!((rows[2].mean_nrmse - 0.75).abs() < 1e-15);
        assert!((rows[3].mean_nrmse - 0.6).abs() < 1e-15);
        assert_eq!(rows[0].mean_accurate_run_fraction, 0.0);
    }

    #[test]
    fn failed_replicates_are_excluded() {
        let mut records = vec![ReplicateRecord {
            replicate: 0,
            seed: 0,
            failure: Some("boom".into()),
            iterations: Vec::new(),
            wall_clock: Vec::new(),
        }];
        assert!(summarize(&records, 1).is_empty());
        records[0].failure = None;
        assert!(summarize(&records, 1).is_empty());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
        let mut cfg = config("nope", 1);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg = config("maxvar", 1);
        cfg.problem = "tank-r1".into();
        cfg.initial = vec![20, 10];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.accurate_only = true;
        cfg.validate().unwrap();
        cfg = config("kleicrit", 1);
        cfg.mode = Mode::Batch;
        cfg.q = Some(2);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg = config("maxvar", 1);
        cfg.replicates = Some(0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_files() {
        let cfg = config("adjmmse", 3);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        emit_summary(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
        emit_summary(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
        for f in [RUNS_FILE, SUMMARY_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn nested_initial_designs() {
        let sets = initial_designs(&[20, 10], 3, 9).unwrap();
        assert_eq!(sets[0][..10], sets[1][..]);
        assert_eq!(sets[0].len(), 20);
    }
}
