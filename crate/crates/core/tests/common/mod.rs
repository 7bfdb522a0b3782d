#![allow(dead_code)]

use std::collections::HashSet;

use mcgraph::synth::er_pattern;
use mcgraph::ObservationPattern;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `n x r` matrix with orthonormal columns.
pub fn orthonormal(n: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    gaussian(n, r, rng).qr().q()
}

pub fn without_mean(mut v: DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.add_scalar_mut(-m);
    v
}

/// ER pattern that is never empty.
pub fn random_pattern(n1: usize, n2: usize, symmetric: bool, prob: f64, seed: u64) -> ObservationPattern {
    let p = er_pattern(n1, n2, prob, symmetric, seed).unwrap();
    if p.count() > 0 {
        return p;
    }
    ObservationPattern::from_entries([(0, 0)], n1, n2, symmetric).unwrap()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

#[derive(Debug, Clone, Copy)]
pub struct OracleProfile {
    pub xi1: f64,
    pub xi2: f64,
    pub delta_max: f64,
    pub phi: f64,
    pub psi: f64,
}

/// Graph quantities evaluated directly from their definitions.
///
/// Bipartite: degrees per side, Laplacian on `n1 + n2` nodes. Symmetric: the
/// pattern is an undirected graph on `n` nodes where a loop counts once toward
/// its node's degree but is left out of the Laplacian; the complement is taken
/// over all `n^2` cells.
pub fn oracle_profile(entries: &HashSet<(usize, usize)>, n1: usize, n2: usize, symmetric: bool) -> OracleProfile {
    let (t1, t2) = (n1 as f64, n2 as f64);
    let row_deg: Vec<f64> = (0..n1).map(|i| (0..n2).filter(|j| entries.contains(&(i, *j))).count() as f64).collect();
    let col_deg: Vec<f64> = (0..n2).map(|j| (0..n1).filter(|i| entries.contains(&(*i, j))).count() as f64).collect();
    let dev = |d: &[f64], norm: f64| {
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / norm).sqrt()
    };
    let xi1 = dev(&row_deg, t2);
    let xi2 = dev(&col_deg, t1);

    let spectral = |e: &HashSet<(usize, usize)>| -> (f64, f64) {
        if symmetric {
            let n = n1;
            let deg: Vec<f64> = (0..n).map(|i| (0..n).filter(|j| e.contains(&(i, *j))).count() as f64).collect();
            let dmax = deg.iter().cloned().fold(0.0, f64::max);
            let lap = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    (0..n).filter(|&k| k != i && e.contains(&(i, k))).count() as f64
                } else if e.contains(&(i, j)) {
                    -1.0
                } else {
                    0.0
                }
            });
            let ev = jacobi_eigenvalues(&lap);
            (dmax, if n < 2 { 0.0 } else { ev[1].max(0.0) })
        } else {
            let rd: Vec<f64> = (0..n1).map(|i| (0..n2).filter(|j| e.contains(&(i, *j))).count() as f64).collect();
            let cd: Vec<f64> = (0..n2).map(|j| (0..n1).filter(|i| e.contains(&(*i, j))).count() as f64).collect();
            let dmax = 0.5 * (rd.iter().cloned().fold(0.0, f64::max) + cd.iter().cloned().fold(0.0, f64::max));
            let n = n1 + n2;
            let lap = DMatrix::from_fn(n, n, |a, b| {
                if a == b {
                    if a < n1 {
                        rd[a]
                    } else {
                        cd[a - n1]
                    }
                } else if (a < n1 && b >= n1 && e.contains(&(a, b - n1)))
                    || (b < n1 && a >= n1 && e.contains(&(b, a - n1)))
                {
                    -1.0
                } else {
                    0.0
                }
            });
            let ev = jacobi_eigenvalues(&lap);
            (dmax, if n < 2 { 0.0 } else { ev[1].max(0.0) })
        }
    };
    let complement: HashSet<(usize, usize)> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .filter(|c| !entries.contains(c))
        .collect();
    let (dmax, phi) = spectral(entries);
    let (dmax_c, phi_c) = spectral(&complement);
    OracleProfile {
        xi1,
        xi2,
        delta_max: dmax,
        phi,
        psi: (dmax - phi).max(dmax_c - phi_c).max(0.0),
    }
}

pub fn entry_set(p: &ObservationPattern) -> HashSet<(usize, usize)> {
    p.entries().iter().copied().collect()
}

pub fn biadjacency(p: &ObservationPattern) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p.rows(), p.cols());
    for &(i, j) in p.entries() {
        a[(i, j)] = 1.0;
    }
    a
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

/// Spectral norm of a symmetric 2x2 (or 1x1) matrix in closed form.
pub fn small_symmetric_norm(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)].abs(),
        2 => {
            let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mid + rad).abs().max((mid - rad).abs())
        }
        _ => panic!("closed form only for r <= 2"),
    }
}
