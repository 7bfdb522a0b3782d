//! Rating datasets as observation patterns, and comparisons of real patterns
//! against Erdős–Rényi patterns of matching density.
//!
//! Ratings are presence-only: any rating marks its (user, item) entry as
//! observed. User and item ids are densified in order of first appearance.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::numbered_lines;
use crate::obsgraph::{GraphProfile, ObservationPattern};
use crate::solver::{project_omega, relative_error, solve, SolverConfig};
use crate::synth::{derive_seed, er_pattern, random_low_rank};

/// Largest accepted `|density - target|` for an ER replicate.
pub const DENSITY_TOLERANCE: f64 = 0.002;
/// Draws allowed per requested replicate before giving up.
pub const DRAWS_PER_REPLICATE: usize = 50;

pub const COMPARISON_CSV_HEADER: &str = "dataset,source,density,psi,xi1,xi2";
pub const RANK1_CSV_HEADER: &str = "dataset,source,avg_rel_err,trials,failures";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatingsFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`.
    TabSeparated,
    /// `user::item::rating::timestamp`.
    DoubleColonSeparated,
    /// `user,item,rating`, optionally with a header line.
    CsvTriples,
}

impl FromStr for RatingsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tab" | "tsv" | "ml100k" => Ok(RatingsFormat::TabSeparated),
            "double-colon" | "dat" | "ml1m" => Ok(RatingsFormat::DoubleColonSeparated),
            "csv" => Ok(RatingsFormat::CsvTriples),
            other => Err(Error::InvalidInput(format!(
                "unknown ratings format '{other}' (expected tab, double-colon or csv)"
            ))),
        }
    }
}

impl RatingsFormat {
    fn split(self, line: &str) -> Vec<&str> {
        match self {
            RatingsFormat::TabSeparated => line.split('\t').collect(),
            RatingsFormat::DoubleColonSeparated => line.split("::").collect(),
            RatingsFormat::CsvTriples => line.split(',').collect(),
        }
    }

    fn field_range(self) -> (usize, usize) {
        match self {
            RatingsFormat::CsvTriples => (3, usize::MAX),
            _ => (3, 4),
        }
    }
}

/// A parsed ratings file. `user_ids[k]` is the original id of row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsData {
    pub pattern: ObservationPattern,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

fn parse_id(field: &str, what: &str) -> std::result::Result<u64, String> {
    match field.trim().parse::<u64>() {
        Ok(0) => Err(format!("{what} id must be positive")),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("{what} id '{}' is not a positive integer", field.trim())),
    }
}

fn parse_line(format: RatingsFormat, line: &str) -> std::result::Result<(u64, u64), String> {
    let fields = format.split(line);
    let (lo, hi) = format.field_range();
    if fields.len() < lo || fields.len() > hi {
        return Err(format!("expected {lo} to {hi} fields, found {}", fields.len()).replace(
            &format!("to {}", usize::MAX),
            "or more",
        ));
    }
    let user = parse_id(fields[0], "user")?;
    let item = parse_id(fields[1], "item")?;
    if fields[2].trim().parse::<f64>().is_err() {
        return Err(format!("rating '{}' is not a number", fields[2].trim()));
    }
    Ok((user, item))
}

pub fn parse_ratings(path: impl AsRef<Path>, format: RatingsFormat) -> Result<ObservationPattern> {
    Ok(parse_ratings_with_ids(path, format)?.pattern)
}

pub fn parse_ratings_with_ids(path: impl AsRef<Path>, format: RatingsFormat) -> Result<RatingsData> {
    let path = path.as_ref();
    let mut users: HashMap<u64, usize> = HashMap::new();
    let mut items: HashMap<u64, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut entries = Vec::new();
    let mut first_content = true;

    for (line_no, line) in numbered_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed = parse_line(format, trimmed);
        let is_first = std::mem::replace(&mut first_content, false);
        let (user, item) = match parsed {
            Ok(pair) => pair,
            Err(_) if is_first && format == RatingsFormat::CsvTriples => continue,
            Err(msg) => return Err(Error::parse(path, line_no, msg)),
        };
        let row = *users.entry(user).or_insert_with(|| {
            user_ids.push(user);
            user_ids.len() - 1
        });
        let col = *items.entry(item).or_insert_with(|| {
            item_ids.push(item);
            item_ids.len() - 1
        });
        entries.push((row, col));
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no ratings found", path.display())));
    }
    let pattern = ObservationPattern::from_entries(entries, user_ids.len(), item_ids.len(), false)?;
    Ok(RatingsData {
        pattern,
        user_ids,
        item_ids,
    })
}

/// Density and profile averages of one side of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyRow {
    pub density: f64,
    pub psi: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl PropertyRow {
    fn of(profile: &GraphProfile) -> Self {
        PropertyRow {
            density: profile.density,
            psi: profile.psi,
            xi1: profile.xi1,
            xi2: profile.xi2,
        }
    }

    pub fn csv_record(&self, dataset: &str, source: &str) -> Vec<String> {
        vec![
            dataset.to_string(),
            source.to_string(),
            self.density.to_string(),
            self.psi.to_string(),
            self.xi1.to_string(),
            self.xi2.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ErComparison {
    pub real: PropertyRow,
    pub er_mean: PropertyRow,
    /// Profiles of the accepted replicates.
    pub replicates: Vec<GraphProfile>,
    pub draws: usize,
}

impl ErComparison {
    pub fn csv_rows(&self, dataset: &str) -> Vec<Vec<String>> {
        vec![
            self.real.csv_record(dataset, "real"),
            self.er_mean.csv_record(dataset, "er-mean"),
        ]
    }
}

/// Profiles `p` and `k` ER patterns of the same shape whose densities fall
/// within [`DENSITY_TOLERANCE`] of `p`'s.
pub fn compare_with_er(p: &ObservationPattern, k: usize, seed: u64) -> Result<ErComparison> {
    compare_with_er_tolerance(p, k, seed, DENSITY_TOLERANCE)
}

fn compare_with_er_tolerance(p: &ObservationPattern, k: usize, seed: u64, tolerance: f64) -> Result<ErComparison> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let real = p.profile()?;
    let target = real.density;
    let max_draws = DRAWS_PER_REPLICATE * k;

    // Densities are cheap; profile only the accepted draws.
    let mut accepted = Vec::with_capacity(k);
    let mut draws = 0;
    while accepted.len() < k {
        if draws == max_draws {
            return Err(Error::Starvation(format!(
                "only {} of {k} ER draws within {tolerance} of density {target} after {max_draws} attempts",
                accepted.len()
            )));
        }
        let candidate = er_pattern(p.rows(), p.cols(), target, p.is_symmetric(), derive_seed(seed, &[draws as u64]))?;
        draws += 1;
        if (candidate.density() - target).abs() <= tolerance {
            accepted.push(candidate);
        }
    }
    let replicates = accepted
        .par_iter()
        .map(|q| q.profile())
        .collect::<Result<Vec<_>>>()?;
    let n = k as f64;
    let mean = |f: fn(&GraphProfile) -> f64| replicates.iter().map(f).sum::<f64>() / n;
    Ok(ErComparison {
        real: PropertyRow::of(&real),
        er_mean: PropertyRow {
            density: mean(|g| g.density),
            psi: mean(|g| g.psi),
            xi1: mean(|g| g.xi1),
            xi2: mean(|g| g.xi2),
        },
        replicates,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank1Summary {
    pub avg_rel_err: f64,
    pub trials: usize,
    /// Trials whose solve raised an error or produced a non-finite estimate;
    /// each contributes an error of 1.
    pub failures: usize,
}

impl Rank1Summary {
    pub fn csv_record(&self, dataset: &str, source: &str) -> Vec<String> {
        vec![
            dataset.to_string(),
            source.to_string(),
            self.avg_rel_err.to_string(),
            self.trials.to_string(),
            self.failures.to_string(),
        ]
    }
}

/// Mean relative error of noiseless rank-1 completion on `p`, each trial with
/// a fresh Gaussian outer product.
pub fn rank1_pattern_experiment(
    p: &ObservationPattern,
    trials: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Rank1Summary> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let mut cfg = cfg.clone();
    cfg.delta = 0.0;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Option<f64>> {
            let (m, _) = random_low_rank(p.rows(), p.cols(), 1, p.is_symmetric(), derive_seed(seed, &[t as u64]))?;
            let observed = project_omega(&m, p)?;
            match solve(&observed, p, &cfg) {
                Ok(res) => {
                    let e = relative_error(&m, &res.estimate)?;
                    Ok(e.is_finite().then_some(e))
                }
                Err(e @ Error::UnsupportedSize { .. }) => Err(e),
                Err(_) => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let total: f64 = outcomes.iter().map(|o| o.unwrap_or(1.0)).sum();
    Ok(Rank1Summary {
        avg_rel_err: total / trials as f64,
        trials,
        failures,
    })
}

/// Induced subpattern on the `rows` highest-degree rows and `cols`
/// highest-degree columns (ties broken by index), kept in index order.
pub fn top_degree_subpattern(p: &ObservationPattern, rows: usize, cols: usize) -> Result<ObservationPattern> {
    let deg = p.degrees();
    let top = |d: &[usize], k: usize| {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[b].cmp(&d[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.sort_unstable();
        idx
    };
    p.induced(&top(&deg.left, rows), &top(&deg.right, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obsgraph::PatternMode;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn small_files_in_each_format() {
        let dir = tempfile::tempdir().unwrap();
        let tab = write(&dir, "u.data", "10\t5\t3\t881250949\n11\t5\t4\t1\n10\t7\t1\t2\n");
        let p = parse_ratings(&tab, RatingsFormat::TabSeparated).unwrap();
        assert_eq!((p.rows(), p.cols(), p.count()), (2, 2, 3));

        let dc = write(&dir, "r.dat", "1::2::5::0\n1::2::3::9\n");
        let p = parse_ratings(&dc, RatingsFormat::DoubleColonSeparated).unwrap();
        assert_eq!(p.count(), 1);

        let csv = write(&dir, "r.csv", "user,item,rating\n3,4,0.5\n4,3,1\n");
        let data = parse_ratings_with_ids(&csv, RatingsFormat::CsvTriples).unwrap();
        assert_eq!(data.user_ids, vec![3, 4]);
        assert_eq!(data.item_ids, vec![4, 3]);
        assert!(data.pattern.contains(0, 0) && data.pattern.contains(1, 1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(&dir, "bad", "1\t2\t3\t4\n1\tx\t3\t4\n");
        let msg = parse_ratings(&bad, RatingsFormat::TabSeparated).unwrap_err().to_string();
        assert!(msg.contains(":2") || msg.contains("line 2"), "{msg}");

        let zero = write(&dir, "zero", "0::1::1::1\n");
        assert!(parse_ratings(&zero, RatingsFormat::DoubleColonSeparated).is_err());

        let empty = write(&dir, "empty", "\n");
        assert!(parse_ratings(&empty, RatingsFormat::TabSeparated).is_err());

        // Header tolerance applies to the first line of CSV files only.
        let late = write(&dir, "late.csv", "1,2,3\nuser,item,rating\n");
        assert!(parse_ratings(&late, RatingsFormat::CsvTriples).is_err());

        assert!("xml".parse::<RatingsFormat>().is_err());
        assert_eq!("ML100K".parse::<RatingsFormat>().unwrap(), RatingsFormat::TabSeparated);
    }

    #[test]
    fn complete_pattern_matches_er_at_probability_one() {
        let p = ObservationPattern::complete(PatternMode::Bipartite { rows: 6, cols: 6 });
        let cmp = compare_with_er(&p, 3, 1).unwrap();
        assert_eq!(cmp.real, cmp.er_mean);
        assert_eq!((cmp.real.psi, cmp.real.xi1, cmp.real.xi2), (0.0, 0.0, 0.0));
        assert_eq!(cmp.draws, 3);
    }

    #[test]
    fn accepted_densities_respect_tolerance() {
        let p = er_pattern(40, 30, 0.3, false, 5).unwrap();
        let cmp = compare_with_er(&p, 4, 2).unwrap();
        for g in &cmp.replicates {
            assert!((g.density - cmp.real.density).abs() <= DENSITY_TOLERANCE);
        }
        assert_eq!(cmp.csv_rows("x").len(), 2);
    }

    #[test]
    fn starvation() {
        let p = ObservationPattern::bipartite(2, 2, [(0, 0), (1, 1)]).unwrap();
        match compare_with_er_tolerance(&p, 3, 0, -1.0) {
            Err(Error::Starvation(msg)) => assert!(msg.contains("150"), "{msg}"),
            other => panic!("expected starvation, got {other:?}"),
        }
        assert!(compare_with_er(&p, 0, 0).is_err());
    }

    #[test]
    fn rank1_on_complete_pattern() {
        let p = ObservationPattern::complete(PatternMode::Bipartite { rows: 12, cols: 9 });
        let s = rank1_pattern_experiment(&p, 3, 4, &SolverConfig::default()).unwrap();
        assert!(s.avg_rel_err < 1e-6, "{s:?}");
        assert_eq!(s.failures, 0);
    }

    #[test]
    fn top_degree_selection() {
        let p = ObservationPattern::bipartite(3, 3, [(0, 0), (2, 0), (2, 1), (2, 2), (1, 2)]).unwrap();
        let sub = top_degree_subpattern(&p, 1, 2).unwrap();
        assert_eq!((sub.rows(), sub.cols()), (1, 2));
        assert_eq!(sub.count(), 2);
    }
}
