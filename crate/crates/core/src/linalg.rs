//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest condition number accepted before a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Extracts the `rows × cols` block of `m` in the given index order.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Condition number of a symmetric matrix (ratio of extreme eigenvalue magnitudes).
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = eigenvalues(m);
    let max = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization with the condition-number guard applied.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return Err(Error::Domain(format!("{what}: empty matrix")));
    }
    let cond = spd_condition(m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::NumericalRank(format!(
            "{what}: condition number {cond:e} exceeds {MAX_CONDITION:e}"
        )));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::NumericalRank(format!("{what}: not positive definite")))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(m, what)?.inverse()))
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(m, what)?.solve(rhs))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(spd_cholesky(m, what)?.solve(rhs))
}
