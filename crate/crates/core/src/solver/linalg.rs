use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive (semi)definite matrix, adding a
/// growing diagonal shift when the plain factorization breaks down.
pub(crate) fn factor_spd(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = k.clone().cholesky() {
        return Ok(ch);
    }
    let scale = k.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
    let mut shift = 1e-14 * scale;
    for _ in 0..12 {
        let mut reg = k.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += shift;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok(ch);
        }
        shift *= 100.0;
    }
    Err(Error::Numerical("KKT matrix is not positive definite".into()))
}

pub(crate) fn solve_spd(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(factor_spd(k)?.solve(rhs))
}
