//! Synthetic instances: Gaussian low-rank matrices, Gaussian noise, and
//! two-block stochastic block model and Erdős–Rényi observation patterns.
//!
//! Block-model convention: `p` is the within-block probability and `q` the
//! across-block probability. Each side is split into two contiguous blocks;
//! with an odd size the first block takes the extra node.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certify::LowRankFactorization;
use crate::error::{Error, Result};
use crate::io;
use crate::obsgraph::{GraphProfile, ObservationPattern};
use crate::solver::project_omega;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based child seed: the same `(seed, path)` always gives the same
/// result, independent of the order in which children are requested.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

/// Draws a rank-`r` matrix from Gaussian factors (`G G^T` when symmetric,
/// `G1 G2^T` otherwise) and returns it with its singular factorization.
pub fn random_low_rank(
    n1: usize,
    n2: usize,
    r: usize,
    symmetric: bool,
    seed: u64,
) -> Result<(DMatrix<f64>, LowRankFactorization)> {
    if r == 0 || r > n1.min(n2) {
        return Err(Error::InvalidInput(format!(
            "rank {r} out of range for a {n1}x{n2} matrix"
        )));
    }
    if symmetric && n1 != n2 {
        return Err(Error::InvalidInput(format!(
            "symmetric matrices must be square, got {n1}x{n2}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut gaussian = |rows: usize| {
        DMatrix::from_fn(rows, r, |_, _| StandardNormal.sample(&mut rng))
    };
    if symmetric {
        let g: DMatrix<f64> = gaussian(n1);
        let m = &g * g.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n1).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let u = DMatrix::from_fn(n1, r, |i, k| eig.eigenvectors[(i, order[k])]);
        let sigma = order[..r].iter().map(|&k| eig.eigenvalues[k]).collect();
        let f = LowRankFactorization::new(u.clone(), u, sigma)?;
        Ok((m, f))
    } else {
        let g1 = gaussian(n1);
        let g2 = gaussian(n2);
        let m = &g1 * g2.transpose();
        let f = LowRankFactorization::from_matrix(&m, r)?;
        Ok((m, f))
    }
}

/// `M + E` with `E` i.i.d. `N(0, sigma^2)`.
pub fn add_noise(m: &DMatrix<f64>, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rng = rng_from_seed(seed);
    Ok(m.map(|v| v + normal.sample(&mut rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n1: usize,
    pub n2: usize,
    /// Within-block inclusion probability.
    pub p: f64,
    /// Across-block inclusion probability.
    pub q: f64,
    pub symmetric: bool,
    pub seed: u64,
}

fn block_of(index: usize, size: usize) -> usize {
    if index < size.div_ceil(2) {
        0
    } else {
        1
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.symmetric && self.n1 != self.n2 {
            return Err(Error::InvalidInput("symmetric block model must be square".into()));
        }
        Ok(())
    }

    /// Inclusion probability of entry `(i, j)`.
    pub fn entry_probability(&self, i: usize, j: usize) -> f64 {
        if block_of(i, self.n1) == block_of(j, self.n2) {
            self.p
        } else {
            self.q
        }
    }
}

/// Samples each candidate entry independently with `prob(i, j)`. Symmetric
/// mode visits the upper triangle including the diagonal and mirrors it.
fn sample_pattern(
    n1: usize,
    n2: usize,
    symmetric: bool,
    seed: u64,
    prob: impl Fn(usize, usize) -> f64,
) -> Result<ObservationPattern> {
    let mut rng = rng_from_seed(seed);
    let mut entries = Vec::new();
    for i in 0..n1 {
        let start = if symmetric { i } else { 0 };
        for j in start..n2 {
            if rng.random::<f64>() < prob(i, j) {
                entries.push((i, j));
            }
        }
    }
    ObservationPattern::from_entries(entries, n1, n2, symmetric)
}

pub fn sbm_pattern(spec: &SbmSpec) -> Result<ObservationPattern> {
    spec.validate()?;
    sample_pattern(spec.n1, spec.n2, spec.symmetric, spec.seed, |i, j| {
        spec.entry_probability(i, j)
    })
}

pub fn er_pattern(n1: usize, n2: usize, prob: f64, symmetric: bool, seed: u64) -> Result<ObservationPattern> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidInput(format!("prob must lie in [0, 1], got {prob}")));
    }
    sample_pattern(n1, n2, symmetric, seed, |_, _| prob)
}

/// Search budget for [`pattern_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Levels of `p + q` to try, in order.
    pub pq_levels: Vec<f64>,
    /// Step of the `p` sweep; `p` runs over `step, 2 step, ..., p+q - step`.
    pub p_step: f64,
    pub attempts_per_point: usize,
}

impl SearchBudget {
    pub fn for_level(pq: f64) -> Self {
        SearchBudget {
            pq_levels: vec![pq],
            p_step: 0.05,
            attempts_per_point: 20,
        }
    }

    /// `(p, q)` grid in sweep order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut points = Vec::new();
        for &pq in &self.pq_levels {
            let mut k = 1usize;
            loop {
                let p = k as f64 * self.p_step;
                if p > pq - self.p_step + 1e-9 {
                    break;
                }
                let q = pq - p;
                if p <= 1.0 && q <= 1.0 {
                    points.push((p, q));
                }
                k += 1;
            }
            if points.is_empty() && pq > 0.0 {
                // Degenerate levels (e.g. p + q = 2 step) still get the
                // balanced point.
                points.push((pq / 2.0, pq / 2.0));
            }
        }
        points
    }
}

#[derive(Debug, Clone)]
pub struct PatternMatch {
    pub pattern: ObservationPattern,
    pub profile: GraphProfile,
    pub p: f64,
    pub q: f64,
}

/// First sampled block-model pattern whose profile quantity (`ξ1 + ξ2 + ψ`,
/// i.e. `2ξ + ψ` when symmetric) lies in `[lo, hi)`; `None` once the budget
/// is exhausted.
pub fn pattern_search(
    target: (f64, f64),
    n1: usize,
    n2: usize,
    budget: &SearchBudget,
    symmetric: bool,
    seed: u64,
) -> Result<Option<PatternMatch>> {
    let (lo, hi) = target;
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty target bin [{lo}, {hi})")));
    }
    for (point, (p, q)) in budget.grid().into_iter().enumerate() {
        for attempt in 0..budget.attempts_per_point {
            let spec = SbmSpec {
                n1,
                n2,
                p,
                q,
                symmetric,
                seed: derive_seed(seed, &[point as u64, attempt as u64]),
            };
            let pattern = sbm_pattern(&spec)?;
            let profile = pattern.profile()?;
            let quantity = profile.quantity();
            if quantity >= lo && quantity < hi {
                return Ok(Some(PatternMatch {
                    pattern,
                    profile,
                    p,
                    q,
                }));
            }
        }
    }
    Ok(None)
}

/// A generated completion problem.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub ground_truth: DMatrix<f64>,
    pub factorization: LowRankFactorization,
    pub pattern: ObservationPattern,
    /// Noisy matrix masked to the pattern.
    pub noisy_observation: DMatrix<f64>,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n1: usize,
    pub n2: usize,
    pub rank: usize,
    pub sigma: f64,
    pub seed: u64,
    pub symmetric: bool,
    pub mu0: f64,
    pub profile: Option<GraphProfile>,
}

impl TrialInstance {
    pub fn generate(
        pattern: ObservationPattern,
        rank: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let (m, f) = random_low_rank(
            pattern.rows(),
            pattern.cols(),
            rank,
            pattern.is_symmetric(),
            derive_seed(seed, &[0]),
        )?;
        let noisy = add_noise(&m, sigma, derive_seed(seed, &[1]))?;
        let noisy_observation = project_omega(&noisy, &pattern)?;
        Ok(TrialInstance {
            ground_truth: m,
            factorization: f,
            pattern,
            noisy_observation,
            sigma,
            seed,
        })
    }

    pub fn meta(&self, profile: Option<GraphProfile>) -> InstanceMeta {
        InstanceMeta {
            n1: self.pattern.rows(),
            n2: self.pattern.cols(),
            rank: self.factorization.rank(),
            sigma: self.sigma,
            seed: self.seed,
            symmetric: self.pattern.is_symmetric(),
            mu0: self.factorization.mu0,
            profile,
        }
    }

    /// Writes `pattern.mtx`, `truth.csv`, `observed.csv` and `meta.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, profile: Option<GraphProfile>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_pattern(dir.join("pattern.mtx"), &self.pattern)?;
        io::write_dense_csv(dir.join("truth.csv"), &self.ground_truth)?;
        io::write_dense_csv(dir.join("observed.csv"), &self.noisy_observation)?;
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&self.meta(profile)).expect("serialisable meta");
        fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
    }
}
