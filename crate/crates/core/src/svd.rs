//! Thin SVD with a residual check.
//!
//! nalgebra's bidiagonal SVD occasionally returns wrong singular vectors for
//! rank-deficient input while the singular values stay correct. Each
//! decomposition is verified by recomposition and, when the check fails,
//! recomputed from the symmetric eigendecomposition of `[[0, X], [X^T, 0]]`.

use nalgebra::DMatrix;

/// Relative Frobenius recomposition error accepted from the fast path.
const RECOMPOSE_TOL: f64 = 1e-10;

/// `X = U diag(s) V^T` with singular values in descending order.
#[derive(Debug, Clone)]
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    fn recompose(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

pub(crate) fn thin_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return ThinSvd {
            u: DMatrix::zeros(rows, 0),
            s: Vec::new(),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let out = ThinSvd {
        u: DMatrix::from_fn(rows, order.len(), |i, k| u[(i, order[k])]),
        s: order.iter().map(|&k| svd.singular_values[k]).collect(),
        v: DMatrix::from_fn(cols, order.len(), |j, k| vt[(order[k], j)]),
    };
    let norm = x.norm();
    if (out.recompose() - x).norm() <= RECOMPOSE_TOL * norm.max(f64::MIN_POSITIVE) {
        return out;
    }
    augmented_svd(x)
}

/// Singular triplets from the positive eigenpairs of the augmented matrix.
/// Triplets at the noise floor are dropped, so fewer than `min(rows, cols)`
/// may be returned.
fn augmented_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = x.shape();
    let n = rows + cols;
    let mut aug = DMatrix::zeros(n, n);
    aug.view_mut((0, rows), (rows, cols)).copy_from(x);
    aug.view_mut((rows, 0), (cols, rows)).copy_from(&x.transpose());
    let eig = aug.symmetric_eigen();
    let floor = f64::EPSILON * n as f64 * eig.eigenvalues.amax();
    let mut order: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > floor).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(rows.min(cols));

    let k = order.len();
    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    for (c, &e) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(e);
        let top = col.rows(0, rows).normalize();
        let bottom = col.rows(rows, cols).normalize();
        u.set_column(c, &top);
        v.set_column(c, &bottom);
    }
    ThinSvd {
        u,
        s: order.iter().map(|&e| eig.eigenvalues[e]).collect(),
        v,
    }
}
