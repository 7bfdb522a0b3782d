//! Observation patterns and the graph properties that drive the completion
//! certificates.
//!
//! A pattern is the set of observed entries of an `n1 x n2` matrix, viewed as a
//! bipartite graph between row and column vertices. In symmetric mode the matrix
//! is square, the edge set is closed under transposition and may contain loops
//! `(i, i)` for observed diagonal entries.
//!
//! Conventions for symmetric mode:
//! - a loop adds one to its node's degree (one observed diagonal entry),
//! - the Laplacian is the simple-graph Laplacian, loops excluded,
//! - the complement is taken over all of `[n] x [n]`, diagonal included,
//! - `delta_max` is the plain maximum degree.
//!
//! Indices are 0-based in the API; file formats are 1-based.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest Laplacian dimension handed to the dense eigensolver.
pub const EIGEN_SIZE_CAP: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternMode {
    Bipartite { rows: usize, cols: usize },
    SymmetricWithLoops { n: usize },
}

impl PatternMode {
    pub fn rows(&self) -> usize {
        match *self {
            PatternMode::Bipartite { rows, .. } => rows,
            PatternMode::SymmetricWithLoops { n } => n,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            PatternMode::Bipartite { cols, .. } => cols,
            PatternMode::SymmetricWithLoops { n } => n,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, PatternMode::SymmetricWithLoops { .. })
    }
}

/// A deterministic sampling set, stored as sorted unique `(row, col)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPattern {
    mode: PatternMode,
    entries: Vec<(usize, usize)>,
}

/// Per-side degree sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Degrees {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl ObservationPattern {
    /// Builds a pattern from 0-based entries. Duplicates are dropped; in
    /// symmetric mode every `(i, j)` also inserts `(j, i)`.
    pub fn from_entries<I>(entries: I, rows: usize, cols: usize, symmetric: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if symmetric && rows != cols {
            return Err(Error::InvalidInput(format!(
                "symmetric pattern requires a square shape, got {rows}x{cols}"
            )));
        }
        let mut set = BTreeSet::new();
        for (i, j) in entries {
            if i >= rows || j >= cols {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: j,
                    rows,
                    cols,
                });
            }
            set.insert((i, j));
            if symmetric {
                set.insert((j, i));
            }
        }
        let mode = if symmetric {
            PatternMode::SymmetricWithLoops { n: rows }
        } else {
            PatternMode::Bipartite { rows, cols }
        };
        Ok(ObservationPattern {
            mode,
            entries: set.into_iter().collect(),
        })
    }

    pub fn bipartite<I>(rows: usize, cols: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_entries(entries, rows, cols, false)
    }

    pub fn symmetric<I>(n: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_entries(entries, n, n, true)
    }

    pub fn empty(mode: PatternMode) -> Self {
        ObservationPattern {
            mode,
            entries: Vec::new(),
        }
    }

    pub fn complete(mode: PatternMode) -> Self {
        let (rows, cols) = (mode.rows(), mode.cols());
        let entries = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .collect();
        ObservationPattern { mode, entries }
    }

    pub fn mode(&self) -> PatternMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.mode.rows()
    }

    pub fn cols(&self) -> usize {
        self.mode.cols()
    }

    pub fn is_symmetric(&self) -> bool {
        self.mode.is_symmetric()
    }

    /// Number of observed matrix entries `|Ω|`.
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries.binary_search(&(row, col)).is_ok()
    }

    pub fn density(&self) -> f64 {
        let cells = self.rows() * self.cols();
        if cells == 0 {
            0.0
        } else {
            self.count() as f64 / cells as f64
        }
    }

    pub fn degrees(&self) -> Degrees {
        let mut left = vec![0usize; self.rows()];
        let mut right = vec![0usize; self.cols()];
        for &(i, j) in &self.entries {
            left[i] += 1;
            right[j] += 1;
        }
        Degrees { left, right }
    }

    /// `(xi1, xi2)`: the left-degree spread normalised by `n2` and the
    /// right-degree spread normalised by `n1`.
    pub fn degree_deviations(&self) -> (f64, f64) {
        let d = self.degrees();
        (
            cross_normalized_deviation(&d.left, self.cols()),
            cross_normalized_deviation(&d.right, self.rows()),
        )
    }

    /// Biadjacency matrix `A_G` (the 0/1 observation mask).
    pub fn biadjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows(), self.cols());
        for &(i, j) in &self.entries {
            a[(i, j)] = 1.0;
        }
        a
    }

    pub fn complement(&self) -> ObservationPattern {
        let mut entries = Vec::with_capacity(self.rows() * self.cols() - self.count());
        let mut observed = self.entries.iter().peekable();
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                if observed.peek() == Some(&&(i, j)) {
                    observed.next();
                } else {
                    entries.push((i, j));
                }
            }
        }
        ObservationPattern {
            mode: self.mode,
            entries,
        }
    }

    /// Laplacian of the observation graph. Bipartite: the `(n1+n2)`-square
    /// block matrix `diag(D_U, D_V) - [[0, A], [A^T, 0]]`. Symmetric: the
    /// `n`-square simple-graph Laplacian with loops dropped.
    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian_of_mask(&self.biadjacency(), self.is_symmetric())
    }

    /// Second-smallest Laplacian eigenvalue.
    pub fn algebraic_connectivity(&self) -> Result<f64> {
        algebraic_connectivity_of_mask(&self.biadjacency(), self.is_symmetric())
    }

    /// `Δmax`: the average of the two per-side maximum degrees, or the plain
    /// maximum degree in symmetric mode.
    pub fn delta_max(&self) -> f64 {
        let d = self.degrees();
        delta_max_of(&d, self.is_symmetric())
    }

    pub fn profile(&self) -> Result<GraphProfile> {
        GraphProfile::of(self)
    }

    /// Induced subpattern on the given (0-based) row and column vertex lists,
    /// relabelled in list order.
    pub fn induced(&self, rows: &[usize], cols: &[usize]) -> Result<ObservationPattern> {
        let row_map = position_map(rows, self.rows())?;
        let col_map = position_map(cols, self.cols())?;
        let entries = self
            .entries
            .iter()
            .filter_map(|&(i, j)| Some((row_map[i]?, col_map[j]?)));
        Self::from_entries(entries, rows.len(), cols.len(), false)
    }

    /// Relabels vertices: row `i` moves to `row_perm[i]`, column `j` to
    /// `col_perm[j]`. Symmetric patterns must use the same permutation on both sides.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Result<ObservationPattern> {
        if row_perm.len() != self.rows() || col_perm.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows(), self.cols()),
                actual: format!("{}x{}", row_perm.len(), col_perm.len()),
            });
        }
        if self.is_symmetric() && row_perm != col_perm {
            return Err(Error::InvalidInput(
                "symmetric patterns need one permutation for both sides".into(),
            ));
        }
        let entries = self.entries.iter().map(|&(i, j)| (row_perm[i], col_perm[j]));
        Self::from_entries(entries, self.rows(), self.cols(), self.is_symmetric())
    }
}

fn position_map(keep: &[usize], len: usize) -> Result<Vec<Option<usize>>> {
    let mut map = vec![None; len];
    for (pos, &v) in keep.iter().enumerate() {
        if v >= len {
            return Err(Error::InvalidInput(format!("vertex {v} out of range {len}")));
        }
        if map[v].replace(pos).is_some() {
            return Err(Error::InvalidInput(format!("vertex {v} listed twice")));
        }
    }
    Ok(map)
}

fn cross_normalized_deviation(degrees: &[usize], normalizer: usize) -> f64 {
    if degrees.is_empty() || normalizer == 0 {
        return 0.0;
    }
    let mean = degrees.iter().sum::<usize>() as f64 / degrees.len() as f64;
    let ss: f64 = degrees
        .iter()
        .map(|&d| {
            let e = d as f64 - mean;
            e * e
        })
        .sum();
    (ss / normalizer as f64).sqrt()
}

fn delta_max_of(d: &Degrees, symmetric: bool) -> f64 {
    let left = d.left.iter().copied().max().unwrap_or(0) as f64;
    let right = d.right.iter().copied().max().unwrap_or(0) as f64;
    if symmetric {
        left
    } else {
        (left + right) / 2.0
    }
}

fn laplacian_of_mask(a: &DMatrix<f64>, symmetric: bool) -> DMatrix<f64> {
    let (n1, n2) = a.shape();
    if symmetric {
        let mut l = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                if i != j && a[(i, j)] != 0.0 {
                    l[(i, j)] = -1.0;
                    l[(i, i)] += 1.0;
                }
            }
        }
        l
    } else {
        let mut l = DMatrix::zeros(n1 + n2, n1 + n2);
        for i in 0..n1 {
            for j in 0..n2 {
                if a[(i, j)] != 0.0 {
                    l[(i, n1 + j)] = -1.0;
                    l[(n1 + j, i)] = -1.0;
                    l[(i, i)] += 1.0;
                    l[(n1 + j, n1 + j)] += 1.0;
                }
            }
        }
        l
    }
}

fn algebraic_connectivity_of_mask(a: &DMatrix<f64>, symmetric: bool) -> Result<f64> {
    let dim = if symmetric {
        a.nrows()
    } else {
        a.nrows() + a.ncols()
    };
    if dim > EIGEN_SIZE_CAP {
        return Err(Error::UnsupportedSize {
            what: "Laplacian dimension",
            size: dim,
            limit: EIGEN_SIZE_CAP,
        });
    }
    if dim < 2 {
        return Ok(0.0);
    }
    let l = laplacian_of_mask(a, symmetric);
    let mut spectrum: Vec<f64> = l.symmetric_eigenvalues().iter().copied().collect();
    spectrum.sort_by(f64::total_cmp);
    Ok(spectrum[1].max(0.0))
}

/// Graph properties of a pattern and its complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphProfile {
    pub symmetric: bool,
    pub n1: usize,
    pub n2: usize,
    pub count: usize,
    pub density: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub delta_max: f64,
    pub phi: f64,
    pub delta_max_complement: f64,
    pub phi_complement: f64,
    pub psi: f64,
}

pub const PROFILE_CSV_HEADER: &str = "n1,n2,count,density,xi1,xi2,delta_max,phi,delta_max_c,phi_c,psi";

impl GraphProfile {
    pub fn of(p: &ObservationPattern) -> Result<Self> {
        let symmetric = p.is_symmetric();
        let a = p.biadjacency();
        let complement = a.map(|v| 1.0 - v);

        let d = p.degrees();
        let dc = Degrees {
            left: d.left.iter().map(|&x| p.cols() - x).collect(),
            right: d.right.iter().map(|&x| p.rows() - x).collect(),
        };
        let (xi1, xi2) = p.degree_deviations();
        let delta_max = delta_max_of(&d, symmetric);
        let delta_max_complement = delta_max_of(&dc, symmetric);
        let phi = algebraic_connectivity_of_mask(&a, symmetric)?;
        let phi_complement = algebraic_connectivity_of_mask(&complement, symmetric)?;
        // Clamped at zero so that every graph has a profile.
        let psi = (delta_max - phi)
            .max(delta_max_complement - phi_complement)
            .max(0.0);

        Ok(GraphProfile {
            symmetric,
            n1: p.rows(),
            n2: p.cols(),
            count: p.count(),
            density: p.density(),
            xi1,
            xi2,
            delta_max,
            phi,
            delta_max_complement,
            phi_complement,
            psi,
        })
    }

    /// The graph term of the completion conditions: `ξ1 + ξ2 + ψ`, which is
    /// `2ξ + ψ` in symmetric mode.
    pub fn quantity(&self) -> f64 {
        self.xi1 + self.xi2 + self.psi
    }

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.n1.to_string(),
            self.n2.to_string(),
            self.count.to_string(),
            self.density.to_string(),
            self.xi1.to_string(),
            self.xi2.to_string(),
            self.delta_max.to_string(),
            self.phi.to_string(),
            self.delta_max_complement.to_string(),
            self.phi_complement.to_string(),
            self.psi.to_string(),
        ]
    }
}
