//! Small dense linear-algebra helpers shared by the estimation code.
//!
//! Everything here wraps [`nalgebra`] factorizations with the crate's error
//! conventions: symmetric positive-definite solves retry once with a
//! diagonal jitter of `1e-10·trace/dim` before giving up, singular-value and
//! eigen decompositions are returned sorted in decreasing order with a
//! deterministic tie-break, and loading-style matrices can be put under a
//! first-nonzero-positive sign convention.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Threshold below which a column entry is treated as numerically zero when
/// choosing the sign of a loading column.
pub(crate) const SIGN_TOL: f64 = 1e-10;

/// Solves `G · X = RHS` for symmetric positive-definite `G` via Cholesky,
/// retrying once with `1e-10·tr(G)/dim` added to the diagonal.
pub(crate) fn solve_spd(
    g: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    context: &'static str,
) -> Result<DMatrix<f64>> {
    if let Some(ch) = g.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let dim = g.nrows();
    let jitter = 1e-10 * g.trace() / dim as f64;
    let mut gj = g.clone();
    for i in 0..dim {
        gj[(i, i)] += jitter;
    }
    match gj.cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => Err(Error::LinearSolve { context }),
    }
}

/// Inverse of a symmetric positive-definite matrix, with the same jitter
/// retry as [`solve_spd`].
pub(crate) fn inv_spd(g: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let eye = DMatrix::identity(g.nrows(), g.ncols());
    solve_spd(g, &eye, context)
}

/// Log-determinant of a symmetric positive-definite matrix.
pub(crate) fn ln_det_spd(g: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    match g.clone().cholesky() {
        Some(ch) => Ok(2.0 * ch.l_dirty().diagonal().iter().map(|&x| x.ln()).sum::<f64>()),
        None => Err(Error::NotSpd { context }),
    }
}

/// Thin singular value decomposition `M = U · diag(s) · Vᵀ` with singular
/// values sorted in decreasing order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let svd = m.clone().svd(true, true);
    ThinSvd {
        u: svd.u.expect("svd requested with u"),
        s: svd.singular_values,
        v: svd.v_t.expect("svd requested with v_t").transpose(),
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; ties keep the lower original index first so the result
/// is deterministic.
pub(crate) fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(dim, dim);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Condition number (ratio of extreme eigenvalue magnitudes) of a symmetric
/// matrix. Returns infinity when the smallest magnitude is zero.
pub(crate) fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &x| acc.min(x.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Flips the sign of every column whose first entry with magnitude above
/// [`SIGN_TOL`] is negative, and returns the per-column sign that was
/// applied (`+1.0` or `-1.0`). Columns that are numerically zero everywhere
/// are left alone.
pub(crate) fn sign_fix_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = vec![1.0; m.ncols()];
    for k in 0..m.ncols() {
        let mut col = m.column_mut(k);
        let lead = col.iter().find(|x| x.abs() > SIGN_TOL).copied();
        if let Some(v) = lead {
            if v < 0.0 {
                signs[k] = -1.0;
                col.neg_mut();
            }
        }
    }
    signs
}
