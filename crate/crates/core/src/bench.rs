//! Simulation harness: grids of (rank, noise level, p+q level, quantity bin)
//! cells, each run for a fixed number of seeded trials, written as a records
//! CSV plus an aggregate CSV.
//!
//! Every trial is a pure function of `(master_seed, cell, trial)`, so partial
//! runs can be resumed and the job count never changes the output.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::rescaled_parameter;
use crate::error::{Error, Result};
use crate::solver::{relative_error, solve, SolverConfig};
use crate::synth::{derive_seed, pattern_search, SearchBudget, TrialInstance};

pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RECORDS_CSV_HEADER: &str =
    "mode,rank,sigma,pq,bin_lo,bin_hi,trial,omega,mu0,xi1,xi2,psi,quantity,rel_err,success,iters,wall_ms,skipped";
pub const AGGREGATE_CSV_HEADER: &str =
    "mode,rank,sigma,pq,bin_lo,bin_hi,trials,successes,success_ratio,mean_rel_err,mean_rescaled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Symmetric,
    Rectangular,
}

impl Mode {
    pub fn is_symmetric(self) -> bool {
        self == Mode::Symmetric
    }
}

fn default_threshold() -> f64 {
    0.01
}

fn default_p_step() -> f64 {
    0.05
}

fn default_attempts() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// `[n1, n2]`.
    pub dims: (usize, usize),
    pub ranks: Vec<usize>,
    /// Noise levels; empty means a single noiseless level.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    pub pq_levels: Vec<f64>,
    /// Half-open `[lo, hi)` bins on the profile quantity, sorted and disjoint.
    pub bins: Vec<(f64, f64)>,
    pub trials_per_cell: usize,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_p_step")]
    pub p_step: f64,
    #[serde(default = "default_attempts")]
    pub attempts_per_point: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks every field and reports all problems together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (n1, n2) = self.dims;
        if n1 == 0 || n2 == 0 {
            problems.push(format!("dims must be positive, got [{n1}, {n2}]"));
        }
        if self.mode.is_symmetric() && n1 != n2 {
            problems.push(format!("symmetric mode needs n1 = n2, got [{n1}, {n2}]"));
        }
        if self.ranks.is_empty() {
            problems.push("ranks must not be empty".into());
        }
        for &r in &self.ranks {
            if r == 0 || r > n1.min(n2) {
                problems.push(format!("rank {r} out of range 1..={}", n1.min(n2)));
            }
        }
        for &s in &self.sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                problems.push(format!("sigma {s} must be nonnegative"));
            }
        }
        if self.pq_levels.is_empty() {
            problems.push("pq_levels must not be empty".into());
        }
        for &pq in &self.pq_levels {
            if !(pq > 0.0 && pq <= 2.0) {
                problems.push(format!("pq level {pq} must lie in (0, 2]"));
            }
        }
        if self.bins.is_empty() {
            problems.push("bins must not be empty".into());
        }
        for (k, &(lo, hi)) in self.bins.iter().enumerate() {
            if !(lo < hi) {
                problems.push(format!("bin {k} [{lo}, {hi}) is empty"));
            }
            if let Some(&(next_lo, _)) = self.bins.get(k + 1) {
                if next_lo < hi {
                    problems.push(format!("bins {k} and {} overlap or are unsorted", k + 1));
                }
            }
        }
        if self.trials_per_cell == 0 {
            problems.push("trials_per_cell must be at least 1".into());
        }
        if !(self.success_threshold > 0.0) {
            problems.push(format!("success_threshold must be positive, got {}", self.success_threshold));
        }
        if !(self.p_step > 0.0 && self.p_step < 1.0) {
            problems.push(format!("p_step must lie in (0, 1), got {}", self.p_step));
        }
        if self.attempts_per_point == 0 {
            problems.push("attempts_per_point must be at least 1".into());
        }
        if let Err(Error::InvalidInput(m)) = self.solver.validate() {
            problems.push(format!("solver: {m}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    fn sigma_levels(&self) -> Vec<f64> {
        if self.sigmas.is_empty() {
            vec![0.0]
        } else {
            self.sigmas.clone()
        }
    }

    /// Cells in execution order: rank, then sigma, then p+q, then bin.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &rank in &self.ranks {
            for sigma in self.sigma_levels() {
                for &pq in &self.pq_levels {
                    for &bin in &self.bins {
                        cells.push(Cell {
                            rank,
                            sigma,
                            pq,
                            bin,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub rank: usize,
    pub sigma: f64,
    pub pq: f64,
    pub bin: (f64, f64),
}

impl Cell {
    fn matches(&self, r: &TrialRecord) -> bool {
        r.rank == self.rank
            && r.sigma == self.sigma
            && r.pq == self.pq
            && r.bin_lo == self.bin.0
            && r.bin_hi == self.bin.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub mode: Mode,
    pub rank: usize,
    pub sigma: f64,
    pub pq: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub trial: usize,
    pub omega: usize,
    pub mu0: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub psi: f64,
    pub quantity: f64,
    pub rel_err: f64,
    pub success: bool,
    pub iters: usize,
    pub wall_ms: u64,
    pub skipped: bool,
}

impl TrialRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        let mut a = self.clone();
        a.wall_ms = other.wall_ms;
        // NaN fields of skipped records compare through their bit patterns.
        format!("{a:?}") == format!("{other:?}")
    }

    pub fn rescaled(&self) -> f64 {
        rescaled_parameter(self.omega, self.mu0, self.rank, self.quantity)
    }
}

fn cell_seed(cfg: &ExperimentConfig, tag: u64, cell: &Cell, with_model: bool, trial: usize) -> u64 {
    let mut path = vec![tag, cell.pq.to_bits(), cell.bin.0.to_bits(), cell.bin.1.to_bits()];
    if with_model {
        path.push(cell.rank as u64);
        path.push(cell.sigma.to_bits());
    }
    path.push(trial as u64);
    derive_seed(cfg.master_seed, &path)
}

/// Generates, solves and scores one trial. The pattern depends only on
/// `(p+q, bin, trial)`, so cells that differ in rank or noise share patterns.
pub fn run_trial(cfg: &ExperimentConfig, cell: &Cell, trial: usize) -> Result<TrialRecord> {
    let started = Instant::now();
    let (n1, n2) = cfg.dims;
    let symmetric = cfg.mode.is_symmetric();
    let budget = SearchBudget {
        pq_levels: vec![cell.pq],
        p_step: cfg.p_step,
        attempts_per_point: cfg.attempts_per_point,
    };
    let mut record = TrialRecord {
        mode: cfg.mode,
        rank: cell.rank,
        sigma: cell.sigma,
        pq: cell.pq,
        bin_lo: cell.bin.0,
        bin_hi: cell.bin.1,
        trial,
        omega: 0,
        mu0: f64::NAN,
        xi1: f64::NAN,
        xi2: f64::NAN,
        psi: f64::NAN,
        quantity: f64::NAN,
        rel_err: f64::NAN,
        success: false,
        iters: 0,
        wall_ms: 0,
        skipped: true,
    };
    let pattern_seed = cell_seed(cfg, 1, cell, false, trial);
    let Some(found) = pattern_search(cell.bin, n1, n2, &budget, symmetric, pattern_seed)? else {
        record.wall_ms = started.elapsed().as_millis() as u64;
        return Ok(record);
    };
    let omega = found.pattern.count();
    let inst = TrialInstance::generate(
        found.pattern,
        cell.rank,
        cell.sigma,
        cell_seed(cfg, 2, cell, true, trial),
    )?;
    let delta = if cell.sigma > 0.0 {
        4.0 * cell.sigma * (omega as f64).sqrt()
    } else {
        0.0
    };
    let result = solve(
        &inst.noisy_observation,
        &inst.pattern,
        &cfg.solver.clone().with_delta(delta),
    )?;
    let rel_err = relative_error(&inst.ground_truth, &result.estimate)?;

    record.omega = omega;
    record.mu0 = inst.factorization.mu0;
    record.xi1 = found.profile.xi1;
    record.xi2 = found.profile.xi2;
    record.psi = found.profile.psi;
    record.quantity = found.profile.quantity();
    record.rel_err = rel_err;
    record.success = success_rule(rel_err, cfg.success_threshold);
    record.iters = result.iterations;
    record.skipped = false;
    record.wall_ms = started.elapsed().as_millis() as u64;
    Ok(record)
}

/// `rel_err < threshold`; a non-finite error is a failure.
pub fn success_rule(rel_err: f64, threshold: f64) -> bool {
    rel_err.is_finite() && rel_err < threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub rank: usize,
    pub sigma: f64,
    pub pq: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub mean_rel_err: f64,
    pub mean_rescaled: f64,
}

impl AggregateRow {
    pub fn bin_midpoint(&self) -> f64 {
        0.5 * (self.bin_lo + self.bin_hi)
    }
}

fn cell_key_cmp(a: &TrialRecord, b: &TrialRecord) -> Ordering {
    (a.mode as u8)
        .cmp(&(b.mode as u8))
        .then(a.rank.cmp(&b.rank))
        .then(a.sigma.total_cmp(&b.sigma))
        .then(a.pq.total_cmp(&b.pq))
        .then(a.bin_lo.total_cmp(&b.bin_lo))
        .then(a.bin_hi.total_cmp(&b.bin_hi))
}

/// Per-cell success ratios over non-skipped records. Cells whose trials were
/// all skipped produce no row. Rows are ordered by cell key, so the result
/// depends only on the set of records.
pub fn success_ratio(records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut kept: Vec<&TrialRecord> = records.iter().filter(|r| !r.skipped).collect();
    kept.sort_by(|a, b| cell_key_cmp(a, b).then(a.trial.cmp(&b.trial)));
    kept.chunk_by(|a, b| cell_key_cmp(a, b) == Ordering::Equal)
        .map(|group| {
            let first = group[0];
            let n = group.len() as f64;
            let successes = group.iter().filter(|r| r.success).count();
            AggregateRow {
                mode: first.mode,
                rank: first.rank,
                sigma: first.sigma,
                pq: first.pq,
                bin_lo: first.bin_lo,
                bin_hi: first.bin_hi,
                trials: group.len(),
                successes,
                success_ratio: successes as f64 / n,
                mean_rel_err: group.iter().map(|r| r.rel_err).sum::<f64>() / n,
                mean_rescaled: group.iter().map(|r| r.rescaled()).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && v[order[end + 1]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Success-ratio trend of one `(rank, sigma, p+q)` row across bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub rank: usize,
    pub sigma: f64,
    pub pq: f64,
    pub populated_bins: usize,
    /// Spearman correlation of bin midpoint against success ratio.
    pub spearman: Option<f64>,
}

pub fn trend_rows(aggregates: &[AggregateRow]) -> Vec<TrendRow> {
    let mut rows: Vec<TrendRow> = Vec::new();
    let mut sorted: Vec<&AggregateRow> = aggregates.iter().collect();
    sorted.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.pq.total_cmp(&b.pq))
            .then(a.bin_lo.total_cmp(&b.bin_lo))
    });
    for group in sorted.chunk_by(|a, b| a.rank == b.rank && a.sigma == b.sigma && a.pq == b.pq) {
        let mids: Vec<f64> = group.iter().map(|a| a.bin_midpoint()).collect();
        let ratios: Vec<f64> = group.iter().map(|a| a.success_ratio).collect();
        rows.push(TrendRow {
            rank: group[0].rank,
            sigma: group[0].sigma,
            pq: group[0].pq,
            populated_bins: group.len(),
            spearman: spearman(&mids, &ratios),
        });
    }
    rows
}

/// Point where a logistic fit of success against `ln x` crosses 1/2.
///
/// A small ridge term keeps the fit finite on separable data. Returns `None`
/// when all outcomes agree, when fewer than two finite `x > 0` remain, or
/// when the fit is flat.
pub fn logistic_crossing(points: &[(f64, bool)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, _)| x.is_finite() && *x > 0.0)
        .map(|&(x, s)| (x.ln(), if s { 1.0 } else { 0.0 }))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let successes: f64 = pts.iter().map(|p| p.1).sum();
    if successes == 0.0 || successes == n {
        return None;
    }
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sd = (pts.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return None;
    }
    let z: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| ((x - mean) / sd, y)).collect();

    let ridge = 1e-3 * n;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut ga, mut gb) = (0.0, -ridge * b);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, ridge);
        for &(zi, yi) in &z {
            let p = 1.0 / (1.0 + (-(a + b * zi)).exp());
            let w = p * (1.0 - p);
            ga += yi - p;
            gb += (yi - p) * zi;
            haa += w;
            hab += w * zi;
            hbb += w * zi * zi;
        }
        let det = haa * hbb - hab * hab;
        if det <= 0.0 {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a += da;
        b += db;
        if da.abs().max(db.abs()) < 1e-12 {
            break;
        }
    }
    if b.abs() < 1e-9 || !a.is_finite() || !b.is_finite() {
        return None;
    }
    Some((mean + sd * (-a / b)).exp())
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    write_serialized(path.as_ref(), records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<TrialRecord>, _>>()
        .map_err(|e| Error::csv(path, e))
}

pub fn write_aggregates(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    write_serialized(path.as_ref(), rows)
}

pub fn read_aggregates(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Writes through a temporary sibling and renames, so an interrupted run never
/// leaves a truncated file behind.
fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("csv.partial");
    {
        let mut writer = csv::Writer::from_path(&tmp).map_err(|e| Error::csv(&tmp, e))?;
        for row in rows {
            writer.serialize(row).map_err(|e| Error::csv(&tmp, e))?;
        }
        writer.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub cell: Cell,
    /// True when the cell's records were taken from an earlier run.
    pub reused: bool,
    pub completed: usize,
    pub skipped: usize,
    pub successes: usize,
}

impl CellReport {
    pub fn line(&self) -> String {
        format!(
            "rank={} sigma={} pq={} bin=[{}, {}): {}/{} successes, {} skipped{}",
            self.cell.rank,
            self.cell.sigma,
            self.cell.pq,
            self.cell.bin.0,
            self.cell.bin.1,
            self.successes,
            self.completed,
            self.skipped,
            if self.reused { " (cached)" } else { "" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub cells: Vec<CellReport>,
}

fn cell_is_complete(cfg: &ExperimentConfig, cell: &Cell, records: &[TrialRecord]) -> bool {
    let mut trials: Vec<usize> = records
        .iter()
        .filter(|r| r.mode == cfg.mode && cell.matches(r))
        .map(|r| r.trial)
        .collect();
    trials.sort_unstable();
    trials == (0..cfg.trials_per_cell).collect::<Vec<_>>()
}

/// Runs every cell of the grid, writing `records.csv` and `aggregate.csv`
/// under `out_dir`. Cells already complete in an existing `records.csv` are
/// reused without recomputation. The records file is rewritten after each
/// cell. `jobs` bounds the worker threads; `progress` receives one report per
/// cell.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    jobs: Option<usize>,
    mut progress: impl FnMut(&CellReport),
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records_path = out_dir.join(RECORDS_FILE);
    let aggregate_path = out_dir.join(AGGREGATE_FILE);

    let previous = if records_path.exists() {
        read_records(&records_path)?
    } else {
        Vec::new()
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;

    let cells = cfg.cells();
    let mut per_cell: Vec<Vec<TrialRecord>> = Vec::with_capacity(cells.len());
    let mut reports = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let reused = cell_is_complete(cfg, cell, &previous);
        let mut recs: Vec<TrialRecord> = if reused {
            previous
                .iter()
                .filter(|r| r.mode == cfg.mode && cell.matches(r))
                .cloned()
                .collect()
        } else {
            pool.install(|| {
                (0..cfg.trials_per_cell)
                    .into_par_iter()
                    .map(|t| run_trial(cfg, cell, t))
                    .collect::<Result<Vec<_>>>()
            })?
        };
        recs.sort_by_key(|r| r.trial);
        let report = CellReport {
            cell: *cell,
            reused,
            completed: recs.iter().filter(|r| !r.skipped).count(),
            skipped: recs.iter().filter(|r| r.skipped).count(),
            successes: recs.iter().filter(|r| r.success).count(),
        };
        per_cell.push(recs);
        if !reused {
            // Keep finished and still-cached cells on disk for a later resume.
            let mut snapshot: Vec<TrialRecord> = per_cell.concat();
            for later in &cells[k + 1..] {
                if cell_is_complete(cfg, later, &previous) {
                    snapshot.extend(
                        previous
                            .iter()
                            .filter(|r| r.mode == cfg.mode && later.matches(r))
                            .cloned(),
                    );
                }
            }
            write_records(&records_path, &snapshot)?;
        }
        progress(&report);
        reports.push(report);
    }

    let records: Vec<TrialRecord> = per_cell.concat();
    if reports.iter().all(|r| r.reused) {
        write_records(&records_path, &records)?;
    }
    let aggregates = success_ratio(&records);
    write_aggregates(&aggregate_path, &aggregates)?;
    Ok(ExperimentOutput {
        records_path,
        aggregate_path,
        records,
        aggregates,
        cells: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rank: usize, bin: (f64, f64), trial: usize, rel_err: f64, skipped: bool) -> TrialRecord {
        TrialRecord {
            mode: Mode::Symmetric,
            rank,
            sigma: 0.0,
            pq: 0.8,
            bin_lo: bin.0,
            bin_hi: bin.1,
            trial,
            omega: 100,
            mu0: 1.0,
            xi1: 1.0,
            xi2: 1.0,
            psi: 3.0,
            quantity: 5.0,
            rel_err,
            success: success_rule(rel_err, 0.01),
            iters: 1,
            wall_ms: 0,
            skipped,
        }
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{"mode":"symmetric","dims":[8,8],"ranks":[1],"pq_levels":[2.0],
                "bins":[[0.0,1e-9]],"trials_per_cell":2,"p_step":0.999,"attempts_per_point":1}"#,
        )
        .unwrap()
    }

    #[test]
    fn ratios() {
        let all: Vec<_> = (0..4).map(|t| record(2, (0.0, 1.0), t, 1e-5, false)).collect();
        assert_eq!(success_ratio(&all)[0].success_ratio, 1.0);

        let half: Vec<_> = (0..30)
            .map(|t| record(2, (0.0, 1.0), t, if t < 15 { 1e-5 } else { 0.5 }, false))
            .collect();
        assert_eq!(success_ratio(&half)[0].success_ratio, 0.5);

        let skipped: Vec<_> = (0..3).map(|t| record(2, (0.0, 1.0), t, f64::NAN, true)).collect();
        assert!(success_ratio(&skipped).is_empty());
    }

    #[test]
    fn aggregation_ignores_record_order() {
        let mut recs: Vec<_> = (0..6)
            .map(|t| record(1 + t % 2, (t as f64, t as f64 + 1.0), t, 0.001 * t as f64, false))
            .collect();
        let a = success_ratio(&recs);
        recs.reverse();
        assert_eq!(a, success_ratio(&recs));
    }

    #[test]
    fn success_threshold_is_strict() {
        assert!(success_rule(0.0099, 0.01));
        assert!(!success_rule(0.01, 0.01));
        assert!(!success_rule(f64::NAN, 0.01));
    }

    #[test]
    fn rescaled_examples() {
        let mut r = record(1, (0.0, 1.0), 0, 0.0, false);
        r.omega = 5000;
        r.quantity = 50.0;
        assert_eq!(r.rescaled(), 100.0);
        r.omega = 10000;
        assert_eq!(r.rescaled(), 200.0);
        r.quantity = 0.0;
        assert!(r.rescaled().is_infinite());
    }

    #[test]
    fn spearman_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0, 5.0, 7.0, 100.0]), Some(1.0));
        assert_eq!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), None);
        let tied = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((tied + 5.0 / 50f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn logistic_crossing_recovers_threshold() {
        let pts: Vec<(f64, bool)> = (1..=40).map(|k| (k as f64, k > 20)).collect();
        let c = logistic_crossing(&pts).unwrap();
        assert!(c > 18.0 && c < 23.0, "{c}");
        assert!(logistic_crossing(&[(1.0, true), (2.0, true)]).is_none());
    }

    #[test]
    fn config_errors_are_collected() {
        let err = ExperimentConfig::from_json(
            r#"{"mode":"symmetric","dims":[5,6],"ranks":[0],"pq_levels":[3.0],
                "bins":[[2.0,1.0],[0.0,1.0]],"trials_per_cell":0}"#,
        )
        .unwrap_err()
        .to_string();
        for needle in ["n1 = n2", "rank 0", "pq level", "bin 0", "overlap", "trials_per_cell"] {
            assert!(err.contains(needle), "{needle} missing from {err}");
        }
        assert!(ExperimentConfig::from_json(r#"{"mode":"square"}"#).is_err());
    }

    #[test]
    fn full_observation_trial_succeeds() {
        let cfg = tiny_config();
        let cell = cfg.cells()[0];
        let r = run_trial(&cfg, &cell, 0).unwrap();
        assert!(!r.skipped);
        assert_eq!(r.omega, 64);
        assert!(r.rel_err < 1e-6 && r.success);
        assert!(r.same_outcome(&run_trial(&cfg, &cell, 0).unwrap()));
    }

    #[test]
    fn infeasible_bin_is_skipped() {
        let mut cfg = tiny_config();
        cfg.bins = vec![(1e6, 2e6)];
        let r = run_trial(&cfg, &cfg.cells()[0], 0).unwrap();
        assert!(r.skipped && !r.success);
        assert!(success_ratio(&[r]).is_empty());
    }

    #[test]
    fn experiment_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let first = run_experiment(&cfg, dir.path(), Some(1), |_| {}).unwrap();
        assert_eq!(first.aggregates.len(), 1);
        assert_eq!(first.records.len(), 2);
        let records_text = fs::read_to_string(&first.records_path).unwrap();
        let agg_text = fs::read_to_string(&first.aggregate_path).unwrap();
        assert!(records_text.starts_with(RECORDS_CSV_HEADER));
        assert!(agg_text.starts_with(AGGREGATE_CSV_HEADER));

        let second = run_experiment(&cfg, dir.path(), Some(2), |_| {}).unwrap();
        assert!(second.cells.iter().all(|c| c.reused));
        assert_eq!(fs::read_to_string(&first.records_path).unwrap(), records_text);
        assert_eq!(fs::read_to_string(&first.aggregate_path).unwrap(), agg_text);

        let reread = read_records(&first.records_path).unwrap();
        assert_eq!(write_and_read_aggregates(&success_ratio(&reread)), read_aggregates(&first.aggregate_path).unwrap());
    }

    fn write_and_read_aggregates(rows: &[AggregateRow]) -> Vec<AggregateRow> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_aggregates(&p, rows).unwrap();
        read_aggregates(&p).unwrap()
    }
}
