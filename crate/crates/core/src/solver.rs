//! Constrained nuclear-norm minimisation by an inexact augmented Lagrangian
//! method, and the projections used to analyse it.
//!
//! With `D = P_Ω(Y)` the solver works on
//!
//! ```text
//! min ||X||_*  s.t.  X + E = D,  E ∈ C
//! ```
//!
//! where `C` leaves `E` free off `Ω` and keeps `||P_Ω(E)||_F <= δ` on `Ω`. For
//! `δ = 0` this is equality-constrained completion; for `δ > 0` it is the
//! Frobenius-ball program. Each iteration takes one singular value
//! thresholding step on `D - E + Λ/μ` with threshold `1/μ`, projects the
//! residual back onto `C`, updates the multiplier `Λ` and grows `μ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certify::LowRankFactorization;
use crate::error::{Error, Result};
use crate::obsgraph::ObservationPattern;
use crate::svd::thin_svd;

/// Largest side length handed to the dense per-iteration SVD.
pub const SVD_SIZE_CAP: usize = 2000;

/// Upper limit on the penalty relative to its starting value.
const PENALTY_CEILING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Starting penalty; `None` selects `1 / ||P_Ω(Y)||_2`.
    pub penalty_init: Option<f64>,
    pub penalty_growth: f64,
    pub max_iters: usize,
    /// Relative Frobenius feasibility tolerance.
    pub tol_feas: f64,
    /// Relative iterate-change tolerance.
    pub tol_change: f64,
    /// Radius of the Frobenius ball around the observations; zero pins them.
    pub delta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            penalty_init: None,
            penalty_growth: 1.2,
            max_iters: 500,
            tol_feas: 1e-7,
            tol_change: 1e-8,
            delta: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Some(p) = self.penalty_init {
            if !(p > 0.0 && p.is_finite()) {
                problems.push(format!("penalty_init must be positive, got {p}"));
            }
        }
        if !(self.penalty_growth > 1.0 && self.penalty_growth.is_finite()) {
            problems.push(format!("penalty_growth must exceed 1, got {}", self.penalty_growth));
        }
        if self.max_iters == 0 {
            problems.push("max_iters must be positive".to_string());
        }
        if !(self.tol_feas > 0.0) {
            problems.push(format!("tol_feas must be positive, got {}", self.tol_feas));
        }
        if !(self.tol_change > 0.0) {
            problems.push(format!("tol_change must be positive, got {}", self.tol_change));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            problems.push(format!("delta must be nonnegative, got {}", self.delta));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub feasibility: f64,
    pub nuclear_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub estimate: DMatrix<f64>,
    pub iterations: usize,
    /// `||P_Ω(X̂ - Y)||_F`.
    pub feasibility: f64,
    pub nuclear_norm: f64,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
}

impl CompletionResult {
    /// Largest entry of `|X̂ - X̂^T|`; only meaningful for square estimates.
    pub fn asymmetry(&self) -> f64 {
        if self.estimate.is_square() {
            (&self.estimate - self.estimate.transpose()).amax()
        } else {
            f64::NAN
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,feasibility,nuclear_norm\n");
        for (k, t) in self.trace.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", k + 1, t.feasibility, t.nuclear_norm));
        }
        out
    }
}

fn check_shape(x: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if x.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            expected: format!("{rows}x{cols}"),
            actual: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    Ok(())
}

/// `P_Ω(X)`: keeps observed entries, zeros the rest.
pub fn project_omega(x: &DMatrix<f64>, p: &ObservationPattern) -> Result<DMatrix<f64>> {
    check_shape(x, p.rows(), p.cols())?;
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for &(i, j) in p.entries() {
        out[(i, j)] = x[(i, j)];
    }
    Ok(out)
}

fn check_factor_shape(z: &DMatrix<f64>, f: &LowRankFactorization) -> Result<()> {
    check_shape(z, f.u.nrows(), f.v.nrows())
}

/// Projection onto the tangent space at the factorization.
///
/// Rectangular: `UU^T Z + (I - UU^T) Z VV^T`. Symmetric: `UU^T Z UU^T`.
pub fn project_tangent(
    z: &DMatrix<f64>,
    f: &LowRankFactorization,
    symmetric: bool,
) -> Result<DMatrix<f64>> {
    check_factor_shape(z, f)?;
    let pu = &f.u * f.u.transpose();
    if symmetric {
        Ok(&pu * z * &pu)
    } else {
        let pv = &f.v * f.v.transpose();
        let left = &pu * z;
        let right = (z - &left) * pv;
        Ok(left + right)
    }
}

/// Projection onto the orthogonal complement of the tangent space:
/// `(I - UU^T) Z (I - VV^T)`, with `V = U` in symmetric mode.
pub fn project_tangent_perp(
    z: &DMatrix<f64>,
    f: &LowRankFactorization,
    symmetric: bool,
) -> Result<DMatrix<f64>> {
    check_factor_shape(z, f)?;
    let right = if symmetric { &f.u } else { &f.v };
    let zl = z - &f.u * (f.u.transpose() * z);
    Ok(&zl - (&zl * right) * right.transpose())
}

/// Singular value thresholding: the proximal operator of `tau ||.||_*`.
pub fn svt(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    svt_with_norm(x, tau).0
}

/// Returns the thresholded matrix together with its nuclear norm.
fn svt_with_norm(x: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return (x.clone(), 0.0);
    }
    let svd = thin_svd(x);
    let mut out = DMatrix::zeros(rows, cols);
    let mut nuclear = 0.0;
    for (k, s) in svd.s.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk <= 0.0 {
            break;
        }
        nuclear += shrunk;
        out.ger(shrunk, &svd.u.column(k), &svd.v.column(k), 1.0);
    }
    (out, nuclear)
}

/// [`svt_with_norm`] for a symmetric argument, through an eigendecomposition
/// of `(X + X^T) / 2`.
fn svt_symmetric_with_norm(x: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let n = x.nrows();
    if n == 0 {
        return (x.clone(), 0.0);
    }
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut out = DMatrix::zeros(n, n);
    let mut nuclear = 0.0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let shrunk = lambda.abs() - tau;
        if shrunk <= 0.0 {
            continue;
        }
        nuclear += shrunk;
        let col = eig.eigenvectors.column(k);
        out.ger(shrunk * lambda.signum(), &col, &col, 1.0);
    }
    (out, nuclear)
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.singular_values().sum()
}

/// `||M - M̂||_F / ||M||_F`.
pub fn relative_error(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    check_shape(estimate, truth.nrows(), truth.ncols())?;
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::InvalidInput("relative error of a zero ground truth".into()));
    }
    Ok((truth - estimate).norm() / denom)
}

/// Solves the completion program selected by `cfg.delta`. Entries of `observed`
/// off the pattern are ignored. Hitting `max_iters` is not an error: the last
/// iterate is returned with `converged = false`.
pub fn solve(
    observed: &DMatrix<f64>,
    p: &ObservationPattern,
    cfg: &SolverConfig,
) -> Result<CompletionResult> {
    cfg.validate()?;
    let (rows, cols) = (p.rows(), p.cols());
    check_shape(observed, rows, cols)?;
    if rows.max(cols) > SVD_SIZE_CAP {
        return Err(Error::UnsupportedSize {
            what: "matrix side",
            size: rows.max(cols),
            limit: SVD_SIZE_CAP,
        });
    }

    let data = project_omega(observed, p)?;
    let data_norm = data.norm();
    let scale = data_norm.max(1.0);
    let mut estimate = DMatrix::zeros(rows, cols);

    if p.count() == 0 || data_norm == 0.0 {
        // The zero matrix is feasible and has zero nuclear norm.
        return Ok(CompletionResult {
            estimate,
            iterations: 0,
            feasibility: data_norm,
            nuclear_norm: 0.0,
            converged: data_norm <= cfg.delta,
            trace: Vec::new(),
        });
    }

    let mut observed_mask = vec![false; rows * cols];
    for &(i, j) in p.entries() {
        observed_mask[i + j * rows] = true;
    }

    let mut penalty = cfg
        .penalty_init
        .unwrap_or_else(|| 1.0 / data.singular_values().max());
    let penalty_max = penalty * PENALTY_CEILING;
    let mut slack = DMatrix::zeros(rows, cols);
    let mut multiplier = DMatrix::zeros(rows, cols);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut feasibility = data_norm;
    let mut nuclear = 0.0;

    for _ in 0..cfg.max_iters {
        let target = &data - &slack + &multiplier / penalty;
        let (next, norm) = if p.is_symmetric() {
            svt_symmetric_with_norm(&target, 1.0 / penalty)
        } else {
            svt_with_norm(&target, 1.0 / penalty)
        };
        nuclear = norm;

        // Slack: free off Ω, confined to the δ-ball on Ω.
        let mut residual = &data - &next + &multiplier / penalty;
        let on_omega: f64 = residual
            .iter()
            .zip(&observed_mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt();
        let shrink = if on_omega > cfg.delta {
            cfg.delta / on_omega
        } else {
            1.0
        };
        for (v, &m) in residual.iter_mut().zip(&observed_mask) {
            if m {
                *v *= shrink;
            }
        }
        slack = residual;

        let gap = &data - &next - &slack;
        let gap_norm = gap.norm();
        multiplier += gap * penalty;

        let change = (&next - &estimate).norm() / scale;
        estimate = next;
        feasibility = (project_omega(&estimate, p)? - &data).norm();
        trace.push(TracePoint {
            feasibility,
            nuclear_norm: nuclear,
        });

        if gap_norm / scale <= cfg.tol_feas && change <= cfg.tol_change {
            converged = true;
            break;
        }
        penalty = (penalty * cfg.penalty_growth).min(penalty_max);
    }

    Ok(CompletionResult {
        estimate,
        iterations: trace.len(),
        feasibility,
        nuclear_norm: nuclear,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obsgraph::PatternMode;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn e1_factor(n: usize) -> LowRankFactorization {
        let u = DMatrix::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        LowRankFactorization::new(u.clone(), u, vec![1.0]).unwrap()
    }

    #[test]
    fn omega_projection_examples() {
        let x = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        let full = ObservationPattern::complete(PatternMode::Bipartite { rows: 2, cols: 3 });
        assert_eq!(project_omega(&x, &full).unwrap(), x);
        let none = ObservationPattern::empty(PatternMode::Bipartite { rows: 2, cols: 3 });
        assert_eq!(project_omega(&x, &none).unwrap(), DMatrix::zeros(2, 3));

        let diag = ObservationPattern::bipartite(2, 2, [(0, 0), (1, 1)]).unwrap();
        assert_eq!(
            project_omega(&DMatrix::from_element(2, 2, 1.0), &diag).unwrap(),
            DMatrix::<f64>::identity(2, 2)
        );
        assert!(project_omega(&x, &diag).is_err());
    }

    #[test]
    fn tangent_projection_on_e1() {
        let f = e1_factor(3);
        let z = DMatrix::from_fn(3, 3, |i, j| (1 + i * 3 + j) as f64);
        let t = project_tangent(&z, &f, false).unwrap();
        let expected = DMatrix::from_fn(3, 3, |i, j| if i == 0 || j == 0 { z[(i, j)] } else { 0.0 });
        assert_eq!(t, expected);

        let perp = project_tangent_perp(&z, &f, false).unwrap();
        assert_eq!(perp, &z - &expected);

        let ts = project_tangent(&z, &f, true).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = z[(0, 0)];
        assert_eq!(ts, expected);
    }

    #[test]
    fn tangent_projection_fixes_its_range() {
        let m = DMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) % 3) as f64 - 0.7 * j as f64);
        let f = LowRankFactorization::from_matrix(&m, 2).unwrap();
        let x = DMatrix::from_fn(4, 2, |i, k| (i + k) as f64 * 0.3 - 0.2);
        let y = DMatrix::from_fn(5, 2, |i, k| (i * k) as f64 * 0.1 + 1.0);
        let z = &f.u * x.transpose() + y * f.v.transpose();
        let t = project_tangent(&z, &f, false).unwrap();
        assert!((&t - &z).amax() < 1e-12);
        assert!(project_tangent_perp(&z, &f, false).unwrap().amax() < 1e-12);
    }

    #[test]
    fn tangent_projection_dimension_mismatch() {
        let f = e1_factor(3);
        assert!(project_tangent(&DMatrix::zeros(2, 3), &f, false).is_err());
        assert!(project_tangent_perp(&DMatrix::zeros(3, 4), &f, true).is_err());
    }

    #[test]
    fn svt_examples() {
        let x = dmatrix![3.0, 0.0; 0.0, 1.0];
        let y = svt(&x, 2.0);
        assert!((y - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-12);

        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64).sin());
        assert!((svt(&x, 0.0) - &x).amax() < 1e-12);

        let x = dmatrix![0.0, 2.0; 2.0, 0.0];
        assert!((svt(&x, 1.0) - dmatrix![0.0, 1.0; 1.0, 0.0]).amax() < 1e-12);
    }

    #[test]
    fn symmetric_svt_agrees_with_svd_path() {
        let g = DMatrix::from_fn(7, 7, |i, j| ((3 * i + 5 * j) as f64).cos());
        let x = &g + g.transpose();
        for tau in [0.0, 0.5, 2.0, 100.0] {
            let (a, na) = svt_with_norm(&x, tau);
            let (b, nb) = svt_symmetric_with_norm(&x, tau);
            assert!((a - b).amax() < 1e-10);
            assert_abs_diff_eq!(na, nb, epsilon = 1e-10);
        }
    }

    #[test]
    fn relative_error_examples() {
        let m = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert_eq!(relative_error(&m, &m).unwrap(), 0.0);
        assert_eq!(relative_error(&m, &DMatrix::zeros(2, 2)).unwrap(), 1.0);
        assert_abs_diff_eq!(
            relative_error(&m, &dmatrix![1.0, 1.0; 0.0, 0.0]).unwrap(),
            1.0
        );
        assert!(relative_error(&DMatrix::zeros(2, 2), &m).is_err());
    }

    #[test]
    fn full_observation_recovers_input() {
        let m = DMatrix::from_fn(6, 5, |i, j| (i as f64 + 1.0).ln() * (j as f64 - 2.0) + (i * j) as f64);
        let p = ObservationPattern::complete(PatternMode::Bipartite { rows: 6, cols: 5 });
        let res = solve(&m, &p, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(relative_error(&m, &res.estimate).unwrap() < 1e-6);
    }

    /// Nuclear norm of `ones(3,3)` with entry (3,3) replaced by `t`.
    fn nuclear_with_free_entry(t: f64) -> f64 {
        let mut m = DMatrix::from_element(3, 3, 1.0);
        m[(2, 2)] = t;
        nuclear_norm(&m)
    }

    #[test]
    fn single_missing_entry_matches_scalar_search() {
        // Golden-section search over the one free entry.
        let (mut a, mut b) = (-5.0f64, 5.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if nuclear_with_free_entry(c) < nuclear_with_free_entry(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let oracle = (a + b) / 2.0;
        assert_abs_diff_eq!(oracle, 1.0, epsilon = 1e-6);

        let m = DMatrix::from_element(3, 3, 1.0);
        let p = ObservationPattern::bipartite(
            3,
            3,
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&e| e != (2, 2)),
        )
        .unwrap();
        let res = solve(&m, &p, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.estimate[(2, 2)] - oracle).abs() < 1e-4);
        assert!(relative_error(&m, &res.estimate).unwrap() < 1e-4);
    }

    #[test]
    fn ball_program_stays_within_delta() {
        let m = DMatrix::from_fn(8, 8, |i, j| ((i + 1) * (j + 2)) as f64 / 10.0);
        let p = ObservationPattern::bipartite(
            8,
            8,
            (0..8).flat_map(|i| (0..8).map(move |j| (i, j))).filter(|&(i, j)| (i + j) % 3 != 0),
        )
        .unwrap();
        let cfg = SolverConfig::default().with_delta(0.05);
        let res = solve(&m, &p, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.feasibility <= 0.05 + cfg.tol_feas * m.norm().max(1.0));
        // Shrinking toward zero inside the ball lowers the nuclear norm.
        assert!(res.nuclear_norm < nuclear_norm(&m));
    }

    #[test]
    fn empty_pattern_returns_zero() {
        let p = ObservationPattern::empty(PatternMode::Bipartite { rows: 3, cols: 2 });
        let res = solve(&DMatrix::from_element(3, 2, 1.0), &p, &SolverConfig::default()).unwrap();
        assert_eq!(res.estimate, DMatrix::zeros(3, 2));
        assert!(res.converged);
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            penalty_growth: 1.0,
            delta: -1.0,
            ..Default::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("penalty_growth") && err.contains("delta"));

        let p = ObservationPattern::complete(PatternMode::Bipartite { rows: 2, cols: 2 });
        assert!(solve(&DMatrix::zeros(2, 2), &p, &bad).is_err());
        assert!(solve(&DMatrix::zeros(3, 2), &p, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let m = DMatrix::from_fn(10, 10, |i, j| ((i * j) % 7) as f64);
        let p = ObservationPattern::bipartite(
            10,
            10,
            (0..10).flat_map(|i| (0..10).map(move |j| (i, j))).filter(|&(i, j)| (i * j) % 2 == 0),
        )
        .unwrap();
        let cfg = SolverConfig {
            max_iters: 2,
            ..Default::default()
        };
        let res = solve(&m, &p, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
        assert_eq!(res.trace.len(), 2);
    }

    #[test]
    fn trace_csv_layout() {
        let p = ObservationPattern::complete(PatternMode::Bipartite { rows: 2, cols: 2 });
        let res = solve(&dmatrix![1.0, 2.0; 3.0, 4.0], &p, &SolverConfig::default()).unwrap();
        let csv = res.trace_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,feasibility,nuclear_norm"));
        assert_eq!(lines.count(), res.iterations);
    }
}
