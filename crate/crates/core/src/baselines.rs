//! Thresholding rules and penalized least squares used as comparison
//! estimators.
//!
//! Each penalty kind is described by a unit penalty `p_t(θ)` whose
//! one-dimensional problem `½(z − θ)² + p_t(θ)` is solved exactly by
//! [`threshold`] with level `t`:
//!
//! | kind | `p_t(θ)` |
//! |------|----------|
//! | soft | `t|θ|` |
//! | hard | `½(t² − (t − |θ|)²₊)` |
//! | scad | `t|θ|` on `|θ| ≤ t`, `(2atθ| − θ² − t²)/(2(a−1))` on `t < |θ| ≤ at`, `(a+1)t²/2` beyond |
//!
//! The penalized least-squares objective carries the factor 2 of
//! `PS(θ) = ‖Y − Xθ‖² + 2 Σ_j f_j(θ_j, λ)` with `f_j(θ, λ) = s_j p_{λ/s_j}(θ)`
//! and `s_j = ‖x_j‖²`. For the soft penalty this is the plain lasso term
//! `λ|θ_j|`. With these conventions the coordinate update is
//! `θ_j ← threshold(x_j'r_{−j}/s_j, λ/s_j)` for every kind, and on designs
//! with `X'X = nI` the minimizer is `threshold(X'Y/n, λ/n)` coordinate-wise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::partition::IndexPartition;

pub const DEFAULT_SCAD_A: f64 = 3.7;

fn default_scad_a() -> f64 {
    DEFAULT_SCAD_A
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Hard,
    Soft,
    Scad {
        #[serde(default = "default_scad_a")]
        a: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    #[serde(flatten)]
    pub kind: PenaltyKind,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        let spec = Self { kind, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hard(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::Hard,
            lambda,
        }
    }

    pub fn soft(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::Soft,
            lambda,
        }
    }

    pub fn scad(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::Scad { a: DEFAULT_SCAD_A },
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "λ must be non-negative, got {}",
                self.lambda
            )));
        }
        if let PenaltyKind::Scad { a } = self.kind {
            if !(a > 2.0) {
                return Err(Error::InvalidSpec(format!("SCAD a must exceed 2, got {a}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PenaltyKind::Hard => "hard",
            PenaltyKind::Soft => "soft",
            PenaltyKind::Scad { .. } => "scad",
        }
    }

    fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            kind: self.kind,
            lambda,
        }
    }

    /// Unit penalty `p_λ(θ)`.
    pub fn unit_penalty(&self, theta: f64) -> f64 {
        let t = self.lambda;
        let x = theta.abs();
        match self.kind {
            PenaltyKind::Soft => t * x,
            PenaltyKind::Hard => {
                let gap = (t - x).max(0.0);
                0.5 * (t * t - gap * gap)
            }
            PenaltyKind::Scad { a } => {
                if x <= t {
                    t * x
                } else if x <= a * t {
                    (2.0 * a * t * x - x * x - t * t) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * t * t / 2.0
                }
            }
        }
    }
}

/// Exact minimizer of `½(z − θ)² + p_λ(θ)`. Odd in `z` for every kind.
pub fn threshold(z: f64, pen: &PenaltySpec) -> f64 {
    let lambda = pen.lambda;
    let x = z.abs();
    match pen.kind {
        PenaltyKind::Hard => {
            if x > lambda {
                z
            } else {
                0.0
            }
        }
        PenaltyKind::Soft => z.signum() * (x - lambda).max(0.0),
        PenaltyKind::Scad { a } => {
            if x <= 2.0 * lambda {
                z.signum() * (x - lambda).max(0.0)
            } else if x <= a * lambda {
                ((a - 1.0) * z - z.signum() * a * lambda) / (a - 2.0)
            } else {
                z
            }
        }
    }
}

fn column_scales(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm_squared()).collect()
}

/// `‖Y − Xθ‖² + 2 Σ_j s_j p_{λ/s_j}(θ_j)`.
pub fn penalized_ls_objective(
    theta: &[f64],
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    pen: &PenaltySpec,
) -> Result<f64> {
    check_dim(x.ncols(), theta.len())?;
    check_dim(x.nrows(), y.len())?;
    let rss = (y - x * DVector::from_column_slice(theta)).norm_squared();
    if pen.lambda == 0.0 {
        return Ok(rss);
    }
    let penalty: f64 = column_scales(x)
        .iter()
        .zip(theta)
        .map(|(&s, &t)| s * pen.with_lambda(pen.lambda / s).unit_penalty(t))
        .sum();
    Ok(rss + 2.0 * penalty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each full sweep (index 0 is the starting point).
    pub objective_trace: Vec<f64>,
    /// Change in the objective over the last sweep.
    pub last_delta: f64,
}

/// Cyclic coordinate descent for the penalized least-squares objective,
/// started at the least-squares fit and sweeping coordinates in index order.
/// Stops when the largest coordinate change in a sweep falls below `tol`.
pub fn coordinate_descent_pls(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    pen: &PenaltySpec,
    tol: f64,
    max_iter: usize,
) -> Result<DescentResult> {
    pen.validate()?;
    check_dim(x.nrows(), y.len())?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let xtx = x.transpose() * x;
    let mut beta = linalg::spd_solve_vec(&xtx, &(x.transpose() * y), "X'X")?;
    let scales = column_scales(x);
    let mut resid = y - x * &beta;
    let mut trace = vec![penalized_ls_objective(beta.as_slice(), y, x, pen)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..x.ncols() {
            let col = x.column(j);
            let s = scales[j];
            let z = beta[j] + col.dot(&resid) / s;
            let updated = threshold(z, &pen.with_lambda(pen.lambda / s));
            let step = updated - beta[j];
            if step != 0.0 {
                resid.axpy(-step, &col, 1.0);
                beta[j] = updated;
            }
            max_change = max_change.max(step.abs());
        }
        trace.push(penalized_ls_objective(beta.as_slice(), y, x, pen)?);
        if max_change < tol {
            converged = true;
            break;
        }
    }
    let last_delta = match trace.as_slice() {
        [.., prev, last] => last - prev,
        _ => 0.0,
    };
    Ok(DescentResult {
        beta: beta.iter().copied().collect(),
        iterations,
        converged,
        objective_trace: trace,
        last_delta,
    })
}

/// Least squares on the true support with the other coordinates pinned at `c`:
/// `β̂_b = (X_b'X_b)⁻¹X_b'(Y − X_b̄ c_b̄)`, returned in original order.
pub fn oracle_lse(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    support: &IndexPartition,
    c: &[f64],
) -> Result<Vec<f64>> {
    check_dim(x.nrows(), y.len())?;
    check_dim(x.ncols(), support.dim())?;
    check_dim(x.ncols(), c.len())?;
    let mut out = c.to_vec();
    if support.is_empty() {
        return Ok(out);
    }
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let xb = linalg::submatrix(x, &rows, support.active());
    let mut target = y.clone();
    for &j in support.inactive() {
        target.axpy(-c[j], &x.column(j), 1.0);
    }
    let beta_b = linalg::spd_solve_vec(
        &(xb.transpose() * &xb),
        &(xb.transpose() * target),
        "X_b'X_b",
    )?;
    for (k, &j) in support.active().iter().enumerate() {
        out[j] = beta_b[k];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DesignSpec;
    use approx::assert_relative_eq;

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold(0.3, &PenaltySpec::hard(0.5)), 0.0);
        assert_eq!(threshold(0.7, &PenaltySpec::hard(0.5)), 0.7);
        assert_eq!(threshold(1.5, &PenaltySpec::soft(0.5)), 1.0);
        assert_eq!(threshold(-0.2, &PenaltySpec::soft(0.5)), 0.0);
        assert_eq!(threshold(1.0, &PenaltySpec::scad(0.5)), 0.5);
        assert_eq!(threshold(2.0, &PenaltySpec::scad(0.5)), 2.0);
        // Middle branch: (2.7·1.5 − 1.85)/1.7
        assert_relative_eq!(
            threshold(1.5, &PenaltySpec::scad(0.5)),
            (2.7 * 1.5 - 1.85) / 1.7,
            max_relative = 1e-15
        );
    }

    /// Brute-force minimization of ½(z − θ)² + p(θ) on a fine grid.
    fn grid_argmin(z: f64, pen: &PenaltySpec) -> f64 {
        let step = 1e-5;
        let mut best = (f64::INFINITY, 0.0);
        let mut i = -400_000i64;
        while i <= 400_000 {
            let t = i as f64 * step;
            let v = 0.5 * (z - t) * (z - t) + pen.unit_penalty(t);
            if v < best.0 {
                best = (v, t);
            }
            i += 1;
        }
        best.1
    }

    #[test]
    fn threshold_solves_the_scalar_problem() {
        for pen in [
            PenaltySpec::hard(0.5),
            PenaltySpec::soft(0.5),
            PenaltySpec::scad(0.5),
        ] {
            for z in [-2.3, -1.2, -0.7, -0.2, 0.1, 0.45, 0.8, 1.0, 1.3, 1.7, 2.5] {
                let t = threshold(z, &pen);
                assert!(
                    (t - grid_argmin(z, &pen)).abs() < 2e-5,
                    "{} z={z}",
                    pen.name()
                );
            }
        }
    }

    #[test]
    fn penalty_validation() {
        assert!(PenaltySpec::new(PenaltyKind::Soft, -1.0).is_err());
        assert!(PenaltySpec::new(PenaltyKind::Scad { a: 2.0 }, 1.0).is_err());
        assert!(PenaltySpec::new(PenaltyKind::Scad { a: 3.7 }, 1.0).is_ok());
    }

    fn small_problem() -> (DVector<f64>, DMatrix<f64>) {
        let x = DesignSpec::Gaussian { seed: 3 }.materialize(20, 2).unwrap();
        let y = DVector::from_fn(20, |i, _| (i as f64 * 0.37).sin() + 0.5 * x[(i, 0)]);
        (y, x)
    }

    #[test]
    fn objective_examples() {
        let (y, x) = small_problem();
        let theta = [1.0, -2.0];
        let rss = (&y - &x * DVector::from_column_slice(&theta)).norm_squared();
        assert_eq!(
            penalized_ls_objective(&theta, &y, &x, &PenaltySpec::soft(0.0)).unwrap(),
            rss
        );
        assert_relative_eq!(
            penalized_ls_objective(&[0.0, 0.0], &y, &x, &PenaltySpec::scad(0.8)).unwrap(),
            y.norm_squared(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            penalized_ls_objective(&theta, &y, &x, &PenaltySpec::soft(0.5)).unwrap(),
            rss + 3.0,
            max_relative = 1e-13
        );
        assert!(penalized_ls_objective(&[1.0], &y, &x, &PenaltySpec::soft(0.5)).is_err());
    }

    #[test]
    fn descent_examples() {
        let n = 64;
        let x = DesignSpec::Orthonormal { seed: 5 }
            .materialize(n, 3)
            .unwrap();
        let y = DVector::from_fn(n, |i, _| {
            0.1 * x[(i, 0)] + 0.02 * x[(i, 1)] - (i as f64).cos()
        });
        let lambda = 3.0;
        let xty = x.transpose() * &y / n as f64;
        for pen in [
            PenaltySpec::soft(lambda),
            PenaltySpec::hard(lambda),
            PenaltySpec::scad(lambda),
        ] {
            let fit = coordinate_descent_pls(&y, &x, &pen, 1e-12, 100).unwrap();
            assert!(fit.converged);
            for j in 0..3 {
                let closed = threshold(xty[j], &pen.with_lambda(lambda / n as f64));
                assert!((fit.beta[j] - closed).abs() < 1e-8, "{} {j}", pen.name());
            }
        }

        let (y, x) = small_problem();
        let ls = coordinate_descent_pls(&y, &x, &PenaltySpec::soft(0.0), 1e-10, 100).unwrap();
        let beta = linalg::spd_solve_vec(&(x.transpose() * &x), &(x.transpose() * &y), "").unwrap();
        for j in 0..2 {
            assert!((ls.beta[j] - beta[j]).abs() < 1e-10);
        }

        let zero =
            coordinate_descent_pls(&DVector::zeros(20), &x, &PenaltySpec::scad(1.0), 1e-10, 10)
                .unwrap();
        assert_eq!(zero.beta, vec![0.0, 0.0]);

        assert!(coordinate_descent_pls(&y, &x, &PenaltySpec::soft(1.0), 0.0, 10).is_err());
    }

    #[test]
    fn descent_reports_non_convergence() {
        let x = DesignSpec::Gaussian { seed: 9 }.materialize(30, 4).unwrap();
        let y = DVector::from_fn(30, |i, _| (i as f64).sin());
        let fit = coordinate_descent_pls(&y, &x, &PenaltySpec::soft(2.0), 1e-300, 2).unwrap();
        assert_eq!(fit.iterations, 2);
        assert!(!fit.converged);
        assert_eq!(fit.objective_trace.len(), 3);
    }

    #[test]
    fn oracle_lse_examples() {
        let (y, x) = small_problem();
        let full = oracle_lse(&y, &x, &IndexPartition::full(2), &[5.0, 5.0]).unwrap();
        let beta = linalg::spd_solve_vec(&(x.transpose() * &x), &(x.transpose() * &y), "").unwrap();
        for j in 0..2 {
            assert_relative_eq!(full[j], beta[j], max_relative = 1e-12);
        }
        assert_eq!(
            oracle_lse(&y, &x, &IndexPartition::empty(2), &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );

        // Orthogonal blocks: the active coefficient is the per-column fit.
        let n = 40;
        let x = DesignSpec::Orthonormal { seed: 2 }
            .materialize(n, 3)
            .unwrap();
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.1).exp().ln_1p());
        let b = IndexPartition::from_active(3, &[0, 2]).unwrap();
        let est = oracle_lse(&y, &x, &b, &[0.0; 3]).unwrap();
        for &j in &[0, 2] {
            assert_relative_eq!(est[j], x.column(j).dot(&y) / n as f64, max_relative = 1e-10);
        }
        assert_eq!(est[1], 0.0);
    }
}
