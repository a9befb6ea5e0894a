//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Cholesky::new(m.clone())
}

/// log-determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky(m)?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    cholesky(m).is_some()
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(m).map(|c| c.inverse())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}
