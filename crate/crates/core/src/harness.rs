//! Monte Carlo ensembles of seeded trials.
//!
//! Trials run on a worker pool and are aggregated after all of them finish.
//! Every trial draws its perturbations from streams keyed by
//! `(master seed, trial index)`, so the summary does not depend on how many
//! workers ran or in which order trials completed.
//!
//! Summary CSV columns:
//!
//! ```text
//! t, f0_mean, f0_q05, f0_q95,
//! viol1_mean, viol1_q05, viol1_q95, ..., violm_mean, violm_q05, violm_q95,
//! viol_norm_mean, viol_norm_q05, viol_norm_q95, spread_mean, oracle_cumulative
//! ```
//!
//! `t` counts averaged iterates. Floats are written with 17 significant
//! digits so a parse restores them bit for bit.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{run, AlgorithmError, ParamSchedule, RunOptions, TrialResult};
use crate::problem::ProblemInstance;
use crate::topology::NetworkTopology;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    Schema { path: PathBuf, line: usize, msg: String },
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error("trials disagree on sampled rounds (trial {trial})")]
    RaggedTrials { trial: u64 },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Streaming `sum_t gamma_t x_{t+1}` and `sum_t gamma_t`.
pub fn running_average_update(sum: &mut [f64], weight: &mut f64, x_new: &[f64], gamma: f64) {
    debug_assert!(gamma > 0.0);
    for (s, x) in sum.iter_mut().zip(x_new) {
        *s += gamma * x;
    }
    *weight += gamma;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningAverage {
    sum: Vec<f64>,
    weight: f64,
}

impl RunningAverage {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            weight: 0.0,
        }
    }

    pub fn update(&mut self, x_new: &[f64], gamma: f64) {
        running_average_update(&mut self.sum, &mut self.weight, x_new, gamma);
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `None` before the first update.
    pub fn value(&self) -> Option<Vec<f64>> {
        (self.weight > 0.0).then(|| self.sum.iter().map(|s| s / self.weight).collect())
    }
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Type-7 quantile of unsorted values. NaNs sort last.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Pointwise statistics of one trajectory across trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub median: Vec<f64>,
}

impl Band {
    /// `column(k)` yields trial `k`'s trajectory.
    fn collect<'a, F>(trials: usize, len: usize, column: F) -> Self
    where
        F: Fn(usize) -> Box<dyn Iterator<Item = f64> + 'a>,
    {
        let mut band = Band::default();
        if trials == 0 {
            return band;
        }
        let mut grid = vec![vec![0.0; trials]; len];
        for k in 0..trials {
            for (row, v) in grid.iter_mut().zip(column(k)) {
                row[k] = v;
            }
        }
        for mut row in grid {
            band.mean.push(row.iter().sum::<f64>() / trials as f64);
            row.sort_by(f64::total_cmp);
            band.q05.push(quantile_sorted(&row, 0.05));
            band.q95.push(quantile_sorted(&row, 0.95));
            band.median.push(quantile_sorted(&row, 0.5));
        }
        band
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Number of trials aggregated (failed ones excluded).
    pub trials: usize,
    pub m: usize,
    pub rounds: Vec<u64>,
    pub objective: Band,
    /// One band per constraint `j` of `sum_i g_ij`.
    pub constraint_sums: Vec<Band>,
    pub violation: Band,
    pub spread_mean: Vec<f64>,
    pub oracle_cumulative: Vec<u64>,
    pub failed: Vec<FailedTrial>,
}

impl EnsembleSummary {
    pub fn from_trials(m: usize, results: &[TrialResult], failed: Vec<FailedTrial>) -> Result<Self, HarnessError> {
        let Some(first) = results.first() else {
            return Ok(Self {
                m,
                constraint_sums: vec![Band::default(); m],
                failed,
                ..Self::default()
            });
        };
        if let Some(bad) = results.iter().find(|r| r.rounds != first.rounds) {
            return Err(HarnessError::RaggedTrials { trial: bad.trial });
        }
        let k = results.len();
        let len = first.rounds.len();
        let objective = Band::collect(k, len, |t| Box::new(results[t].objective.iter().copied()));
        let violation = Band::collect(k, len, |t| Box::new(results[t].violation.iter().copied()));
        let constraint_sums = (0..m)
            .map(|j| Band::collect(k, len, |t| Box::new(results[t].constraint_sums.iter().map(move |s| s[j]))))
            .collect();
        let spread_mean = (0..len)
            .map(|s| results.iter().map(|r| r.spread[s]).sum::<f64>() / k as f64)
            .collect();
        Ok(Self {
            trials: k,
            m,
            rounds: first.rounds.clone(),
            objective,
            constraint_sums,
            violation,
            spread_mean,
            oracle_cumulative: first.oracle_cumulative.clone(),
            failed,
        })
    }

    /// One line per excluded trial.
    pub fn warnings(&self) -> Vec<String> {
        self.failed
            .iter()
            .map(|f| format!("trial {} failed and was excluded: {}", f.trial, f.error))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub trials: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub options: RunOptions,
    /// Directory for per-trial CSVs, if any.
    pub trial_dir: Option<PathBuf>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            trials: 1,
            workers: 0,
            options: RunOptions::default(),
            trial_dir: None,
        }
    }
}

/// Aggregated summary plus the successful trials in trial order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub summary: EnsembleSummary,
    pub results: Vec<TrialResult>,
}

pub fn trial_csv_name(trial: u64) -> String {
    format!("trial_{trial:04}.csv")
}

/// Runs `config.trials` independent trials and aggregates them. A trial that
/// fails is listed in `summary.failed` instead of aborting the ensemble.
pub fn run_ensemble(
    instance: &ProblemInstance,
    topology: &NetworkTopology,
    schedule: &ParamSchedule,
    config: &EnsembleConfig,
) -> Result<Ensemble, HarnessError> {
    if config.options.stride == 0 {
        return Err(HarnessError::InvalidConfig("stride must be at least 1".into()));
    }
    schedule.validate(instance.m() > 0)?;
    if let Some(dir) = &config.trial_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()?;
    let outcomes: Vec<Result<TrialResult, HarnessError>> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let result = run(instance, topology, schedule, config.master_seed, trial, &config.options)?;
                if let Some(dir) = &config.trial_dir {
                    write_trial_csv(&result, instance.m(), &dir.join(trial_csv_name(trial)))?;
                }
                Ok(result)
            })
            .collect()
    });
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => results.push(r),
            Err(e @ HarnessError::Algorithm(_)) => failed.push(FailedTrial {
                trial: trial as u64,
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let summary = EnsembleSummary::from_trials(instance.m(), &results, failed)?;
    Ok(Ensemble { summary, results })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn summary_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for stat in ["mean", "q05", "q95"] {
        h.push(format!("f0_{stat}"));
    }
    for j in 1..=m {
        for stat in ["mean", "q05", "q95"] {
            h.push(format!("viol{j}_{stat}"));
        }
    }
    for stat in ["mean", "q05", "q95"] {
        h.push(format!("viol_norm_{stat}"));
    }
    h.push("spread_mean".into());
    h.push("oracle_cumulative".into());
    h
}

pub fn trial_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "f0".into()];
    h.extend((1..=m).map(|j| format!("viol{j}")));
    h.extend(["viol_norm".into(), "spread".into(), "oracle_cumulative".into()]);
    h
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

pub fn write_summary_csv(summary: &EnsembleSummary, path: &Path) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_record(summary_header(summary.m)).map_err(csv_err(path))?;
    for (s, t) in summary.rounds.iter().enumerate() {
        let mut row = vec![t.to_string()];
        let band = |b: &Band| [fmt_f64(b.mean[s]), fmt_f64(b.q05[s]), fmt_f64(b.q95[s])];
        row.extend(band(&summary.objective));
        for b in &summary.constraint_sums {
            row.extend(band(b));
        }
        row.extend(band(&summary.violation));
        row.push(fmt_f64(summary.spread_mean[s]));
        row.push(summary.oracle_cumulative[s].to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trial_csv(result: &TrialResult, m: usize, path: &Path) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_record(trial_header(m)).map_err(csv_err(path))?;
    for s in 0..result.rounds.len() {
        let mut row = vec![result.rounds[s].to_string(), fmt_f64(result.objective[s])];
        row.extend(result.constraint_sums[s].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(result.violation[s]));
        row.push(fmt_f64(result.spread[s]));
        row.push(result.oracle_cumulative[s].to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// A parsed numeric CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Reads a CSV written by this module, checking that every row has as many
/// fields as the header.
pub fn read_csv(path: &Path) -> Result<CsvTable, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(HarnessError::Schema {
                path: path.to_path_buf(),
                line,
                msg: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| HarnessError::Schema {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path)(e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
