//! Incoherence, assumption constants and the sufficient conditions for
//! exact and approximate completion under a fixed sampling set.

use std::fmt;

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obsgraph::{GraphProfile, ObservationPattern};
use crate::svd::thin_svd;

/// Column Gram deviation above which a factor is rejected as non-orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Largest number of subsets `theta_estimate` will enumerate exhaustively.
pub const THETA_EXHAUSTIVE_CAP: u64 = 200_000;

/// Orthonormal singular factors of a rank-`r` matrix together with their
/// incoherence constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactorization {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub mu0: f64,
}

impl LowRankFactorization {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() || u.ncols() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("rank {} for U, V and sigma", u.ncols()),
                actual: format!("U {}, V {}, sigma {}", u.ncols(), v.ncols(), sigma.len()),
            });
        }
        let mu0 = incoherence(&u, &v)?;
        Ok(LowRankFactorization { u, v, sigma, mu0 })
    }

    /// Rank-`r` truncated SVD of `m`.
    pub fn from_matrix(m: &DMatrix<f64>, rank: usize) -> Result<Self> {
        let (n1, n2) = m.shape();
        if rank == 0 || rank > n1.min(n2) {
            return Err(Error::InvalidInput(format!(
                "rank {rank} out of range for a {n1}x{n2} matrix"
            )));
        }
        let svd = thin_svd(m);
        if svd.s.len() < rank {
            return Err(Error::InvalidInput(format!(
                "matrix has numerical rank {} below the requested {rank}",
                svd.s.len()
            )));
        }
        let u = svd.u.columns(0, rank).into_owned();
        let v = svd.v.columns(0, rank).into_owned();
        let sigma = svd.s[..rank].to_vec();
        Self::new(u, v, sigma)
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

fn gram_deviation(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let r = g.nrows();
    (g - DMatrix::<f64>::identity(r, r)).amax()
}

/// Smallest `mu0` with `||U_i||^2 <= mu0 r / n1` and `||V_j||^2 <= mu0 r / n2`
/// for every row.
pub fn incoherence(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let r = u.ncols();
    if r == 0 || v.ncols() != r {
        return Err(Error::InvalidInput("factors need matching nonzero rank".into()));
    }
    let deviation = gram_deviation(u).max(gram_deviation(v));
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let worst = |x: &DMatrix<f64>| {
        let n = x.nrows() as f64;
        x.row_iter()
            .map(|row| n * row.norm_squared())
            .fold(0.0, f64::max)
    };
    Ok(worst(u).max(worst(v)) / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEstimate {
    pub theta: f64,
    /// `true` when every admissible subset was evaluated; otherwise `theta`
    /// is a lower bound.
    pub exact: bool,
}

/// Spectral deviation `||scale * sum_{i in S} x_i x_i^T - I_r||`.
fn subset_deviation(rows: &[f64], r: usize, subset: &[usize], scale: f64) -> f64 {
    let mut acc = DMatrix::<f64>::zeros(r, r);
    for &i in subset {
        let x = &rows[i * r..(i + 1) * r];
        for a in 0..r {
            for b in 0..r {
                acc[(a, b)] += x[a] * x[b];
            }
        }
    }
    acc *= scale;
    for a in 0..r {
        acc[(a, a)] -= 1.0;
    }
    acc.symmetric_eigenvalues()
        .iter()
        .fold(0.0, |m, e| m.max(e.abs()))
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn subset_count(n: usize, sizes: std::ops::RangeInclusive<usize>) -> u64 {
    sizes.fold(0u64, |acc, k| acc.saturating_add(binomial(n, k)))
}

/// One side of the uniform subset-deviation bound: the maximum over all
/// `S` with `|S|` in `sizes` of `||scale * sum_{i in S} x_i x_i^T - I_r||`,
/// where `x_i` are the rows of `factor`. Enumerates when the subset count fits
/// `budget`, otherwise samples `budget` random subsets plus the highest- and
/// lowest-leverage subsets of every admissible size.
pub fn subset_deviation_bound(
    factor: &DMatrix<f64>,
    sizes: std::ops::RangeInclusive<usize>,
    scale: f64,
    budget: u64,
    rng: &mut impl Rng,
) -> ThetaEstimate {
    let (n, r) = factor.shape();
    let hi = (*sizes.end()).min(n);
    let lo = *sizes.start();
    if lo > hi {
        return ThetaEstimate {
            theta: 0.0,
            exact: true,
        };
    }
    let rows: Vec<f64> = (0..n)
        .flat_map(|i| (0..r).map(move |k| (i, k)))
        .map(|(i, k)| factor[(i, k)])
        .collect();

    if subset_count(n, lo..=hi) <= budget.min(THETA_EXHAUSTIVE_CAP) {
        let mut theta: f64 = 0.0;
        for k in lo..=hi {
            for subset in (0..n).combinations(k) {
                theta = theta.max(subset_deviation(&rows, r, &subset, scale));
            }
        }
        return ThetaEstimate { theta, exact: true };
    }

    let mut by_leverage: Vec<usize> = (0..n).collect();
    let leverage = |i: usize| rows[i * r..(i + 1) * r].iter().map(|x| x * x).sum::<f64>();
    by_leverage.sort_by(|&a, &b| leverage(b).total_cmp(&leverage(a)));

    let mut theta: f64 = 0.0;
    for k in lo..=hi {
        theta = theta.max(subset_deviation(&rows, r, &by_leverage[..k], scale));
        theta = theta.max(subset_deviation(&rows, r, &by_leverage[n - k..], scale));
    }
    for _ in 0..budget {
        let k = rng.random_range(lo..=hi);
        let subset = index::sample(rng, n, k).into_vec();
        theta = theta.max(subset_deviation(&rows, r, &subset, scale));
    }
    ThetaEstimate {
        theta,
        exact: false,
    }
}

/// `θ` of the strong incoherence assumption: row subsets of `U` sized within
/// the column-degree range, and column subsets of `V` sized within the
/// row-degree range, compared against `I_r`.
pub fn theta_estimate(
    f: &LowRankFactorization,
    p: &ObservationPattern,
    budget: u64,
    seed: u64,
) -> Result<ThetaEstimate> {
    if budget < 1 {
        return Err(Error::InvalidInput("theta budget must be at least 1".into()));
    }
    if f.u.nrows() != p.rows() || f.v.nrows() != p.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", p.rows(), p.cols()),
            actual: format!("{}x{}", f.u.nrows(), f.v.nrows()),
        });
    }
    if p.count() == 0 {
        return Err(Error::InvalidInput("empty observation pattern".into()));
    }
    let d = p.degrees();
    let range = |deg: &[usize]| {
        let lo = deg.iter().copied().min().unwrap_or(0);
        let hi = deg.iter().copied().max().unwrap_or(0);
        lo..=hi
    };
    let scale = (p.rows() * p.cols()) as f64 / p.count() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = subset_deviation_bound(&f.u, range(&d.right), scale, budget, &mut rng);
    let right = subset_deviation_bound(&f.v, range(&d.left), scale, budget, &mut rng);
    Ok(ThetaEstimate {
        theta: left.theta.max(right.theta),
        exact: left.exact && right.exact,
    })
}

fn require_omega(omega: usize) -> Result<f64> {
    if omega == 0 {
        Err(Error::InvalidInput("|Ω| must be positive".into()))
    } else {
        Ok(omega as f64)
    }
}

/// `α = μ0 r n (2ξ + ψ) / |Ω|`.
pub fn alpha_symmetric(profile: &GraphProfile, mu0: f64, r: usize, n: usize, omega: usize) -> Result<f64> {
    let omega = require_omega(omega)?;
    Ok(mu0 * r as f64 * n as f64 * profile.quantity() / omega)
}

/// `γ = sqrt(n1 n2) μ0 r (ξ1 + ξ2 + ψ) / |Ω|`.
pub fn gamma_rectangular(
    profile: &GraphProfile,
    mu0: f64,
    r: usize,
    n1: usize,
    n2: usize,
    omega: usize,
) -> Result<f64> {
    let omega = require_omega(omega)?;
    Ok(((n1 * n2) as f64).sqrt() * mu0 * r as f64 * profile.quantity() / omega)
}

/// `4σ sqrt(|Ω|) + 2σ sqrt(log(1/η))`.
pub fn recommended_delta(sigma: f64, omega: usize, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidInput(format!("eta must lie in (0, 1], got {eta}")));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidInput(format!("sigma must be nonnegative, got {sigma}")));
    }
    Ok(4.0 * sigma * (omega as f64).sqrt() + 2.0 * sigma * (1.0 / eta).ln().sqrt())
}

/// Ratio `|Ω| / (μ0 r q)` with `q` the profile quantity; infinite when `q = 0`.
pub fn rescaled_parameter(omega: usize, mu0: f64, r: usize, quantity: f64) -> f64 {
    let denom = mu0 * r as f64 * quantity;
    if denom > 0.0 {
        omega as f64 / denom
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    ExactSymmetric,
    ApproxSymmetric,
    ExactRectangular,
    ApproxRectangular,
}

impl Theorem {
    pub fn is_symmetric(self) -> bool {
        matches!(self, Theorem::ExactSymmetric | Theorem::ApproxSymmetric)
    }

    pub fn name(self) -> &'static str {
        match self {
            Theorem::ExactSymmetric => "exact-symmetric",
            Theorem::ApproxSymmetric => "approx-symmetric",
            Theorem::ExactRectangular => "exact-rectangular",
            Theorem::ApproxRectangular => "approx-rectangular",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Satisfied,
    Violated,
    /// The condition carries an unspecified constant; only ratios are reported.
    Indeterminate,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Satisfied => "satisfied",
            Status::Violated => "violated",
            Status::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictQuantities {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub rescaled: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub theorem: Theorem,
    pub quantities: VerdictQuantities,
    pub status: Status,
    /// Set when `θ + γ >= 1` leaves the rectangular condition undefined.
    pub out_of_domain: bool,
}

pub const VERDICT_CSV_HEADER: &str = "theorem,satisfied,alpha,gamma,theta,lhs,rhs,rescaled,margin";

impl TheoremVerdict {
    pub fn csv_record(&self) -> Vec<String> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let q = &self.quantities;
        vec![
            self.theorem.to_string(),
            self.status.to_string(),
            cell(q.alpha),
            cell(q.gamma),
            cell(q.theta),
            cell(q.lhs),
            cell(q.rhs),
            cell(q.rescaled),
            cell(q.margin),
        ]
    }
}

fn require_symmetric(profile: &GraphProfile) -> Result<()> {
    if profile.symmetric {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "symmetric theorem applied to a bipartite profile".into(),
        ))
    }
}

/// Exact symmetric completion: `|Ω| > 3 μ0 n r (2ξ + ψ)`.
pub fn verdict_exact_symmetric(
    profile: &GraphProfile,
    mu0: f64,
    r: usize,
    n: usize,
    omega: usize,
) -> Result<TheoremVerdict> {
    require_symmetric(profile)?;
    let alpha = alpha_symmetric(profile, mu0, r, n, omega)?;
    let lhs = omega as f64;
    let rhs = 3.0 * mu0 * n as f64 * r as f64 * profile.quantity();
    Ok(TheoremVerdict {
        theorem: Theorem::ExactSymmetric,
        quantities: VerdictQuantities {
            alpha: Some(alpha),
            lhs: Some(lhs),
            rhs: Some(rhs),
            margin: Some(lhs - rhs),
            rescaled: Some(rescaled_parameter(omega, mu0, r, profile.quantity())),
            ..Default::default()
        },
        status: if lhs > rhs {
            Status::Satisfied
        } else {
            Status::Violated
        },
        out_of_domain: false,
    })
}

/// Approximate symmetric completion, `|Ω| ≳ μ0 n r^1.5 (2ξ + ψ)`: reported as
/// the ratio of the two sides.
pub fn verdict_approx_symmetric(
    profile: &GraphProfile,
    mu0: f64,
    r: usize,
    n: usize,
    omega: usize,
) -> Result<TheoremVerdict> {
    require_symmetric(profile)?;
    let alpha = alpha_symmetric(profile, mu0, r, n, omega)?;
    let lhs = omega as f64;
    let rhs = mu0 * n as f64 * (r as f64).powf(1.5) * profile.quantity();
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
    Ok(TheoremVerdict {
        theorem: Theorem::ApproxSymmetric,
        quantities: VerdictQuantities {
            alpha: Some(alpha),
            lhs: Some(lhs),
            rhs: Some(rhs),
            rescaled: Some(ratio),
            ..Default::default()
        },
        status: Status::Indeterminate,
        out_of_domain: false,
    })
}

/// `γ + sqrt(n1 n2 r (θ² + γ²) / (|Ω| (1 - θ - γ)))`, or `None` when
/// `θ + γ >= 1`.
pub fn rectangular_condition_value(
    gamma: f64,
    theta: f64,
    r: usize,
    n1: usize,
    n2: usize,
    omega: usize,
) -> Option<f64> {
    let slack = 1.0 - theta - gamma;
    if slack <= 0.0 {
        return None;
    }
    let inner = (n1 * n2) as f64 * r as f64 * (theta * theta + gamma * gamma) / (omega as f64 * slack);
    Some(gamma + inner.sqrt())
}

fn meets_threshold(value: f64, threshold: f64, strict: bool) -> bool {
    if strict {
        value < threshold
    } else {
        value <= threshold
    }
}

#[allow(clippy::too_many_arguments)]
fn verdict_rectangular(
    theorem: Theorem,
    threshold: f64,
    strict: bool,
    profile: &GraphProfile,
    mu0: f64,
    theta: f64,
    r: usize,
    n1: usize,
    n2: usize,
    omega: usize,
) -> Result<TheoremVerdict> {
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::InvalidInput(format!("theta must be nonnegative, got {theta}")));
    }
    let gamma = gamma_rectangular(profile, mu0, r, n1, n2, omega)?;
    let value = rectangular_condition_value(gamma, theta, r, n1, n2, omega);
    let status = match value {
        Some(v) if meets_threshold(v, threshold, strict) => Status::Satisfied,
        _ => Status::Violated,
    };
    let lhs = value.unwrap_or(f64::INFINITY);
    Ok(TheoremVerdict {
        theorem,
        quantities: VerdictQuantities {
            gamma: Some(gamma),
            theta: Some(theta),
            lhs: Some(lhs),
            rhs: Some(threshold),
            margin: Some(threshold - lhs),
            rescaled: Some(rescaled_parameter(omega, mu0, r, profile.quantity())),
            ..Default::default()
        },
        status,
        out_of_domain: value.is_none(),
    })
}

/// Exact rectangular completion: condition value `< 1`.
#[allow(clippy::too_many_arguments)]
pub fn verdict_exact_rectangular(
    profile: &GraphProfile,
    mu0: f64,
    theta: f64,
    r: usize,
    n1: usize,
    n2: usize,
    omega: usize,
) -> Result<TheoremVerdict> {
    verdict_rectangular(
        Theorem::ExactRectangular,
        1.0,
        true,
        profile,
        mu0,
        theta,
        r,
        n1,
        n2,
        omega,
    )
}

/// Approximate rectangular completion: condition value `<= 1/2`.
#[allow(clippy::too_many_arguments)]
pub fn verdict_approx_rectangular(
    profile: &GraphProfile,
    mu0: f64,
    theta: f64,
    r: usize,
    n1: usize,
    n2: usize,
    omega: usize,
) -> Result<TheoremVerdict> {
    verdict_rectangular(
        Theorem::ApproxRectangular,
        0.5,
        false,
        profile,
        mu0,
        theta,
        r,
        n1,
        n2,
        omega,
    )
}
