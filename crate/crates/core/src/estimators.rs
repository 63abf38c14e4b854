//! Classical, oracle and smoothed Hodges' estimators built on a base estimate.
//!
//! Given a base estimate `θ̂` with rate `r_n` and precision `V̂`, the oracle
//! estimator keeps the coordinates with `|θ̂_j − c_j| > a_j` (the selected set
//! `b`), sets the rest to `c_j`, and shifts the kept block by
//! `V̂_bb⁻¹ V̂_bb̄ (θ̂_b̄ − c_b̄)`, the conditional-mean correction given that the
//! dropped coordinates sit at the center.
//!
//! Boundary conventions: the classical estimator collapses when
//! `‖θ̂ − c‖ ≤ a_n`; the oracle estimator drops coordinate `j` when
//! `|θ̂_j − c_j| ≤ a_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::partition::{correction_gain, partition_from_point, CovSpec, IndexPartition};
use crate::schedule::{validate_schedule, PowerLaw, ThresholdSchedule};

/// A base estimate together with its convergence rate and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEstimate {
    pub theta_hat: Vec<f64>,
    pub r_n: f64,
    pub v_hat: CovSpec,
    pub n: u64,
}

impl BaseEstimate {
    pub fn new(theta_hat: Vec<f64>, r_n: f64, v_hat: CovSpec, n: u64) -> Result<Self> {
        check_dim(v_hat.dim(), theta_hat.len())?;
        if !(r_n > 0.0 && r_n.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "rate must be positive, got {r_n}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidSpec("sample size must be at least 1".into()));
        }
        Ok(Self {
            theta_hat,
            r_n,
            v_hat,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HodgesResult {
    pub theta_tilde: Vec<f64>,
    /// Coordinates kept away from the center.
    pub selected: IndexPartition,
    pub center: Vec<f64>,
    pub thresholds: Vec<f64>,
}

fn euclidean_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Whether the classical estimator collapses `theta_hat` to `c`.
pub fn classical_collapses(theta_hat: &[f64], c: &[f64], a_n: f64) -> bool {
    euclidean_dist(theta_hat, c) <= a_n
}

/// Collapses the whole vector to `c` when `‖θ̂ − c‖ ≤ a_n`.
pub fn classical_hodges(est: &BaseEstimate, c: &[f64], a_n: f64) -> Result<HodgesResult> {
    check_dim(est.dim(), c.len())?;
    if !(a_n > 0.0) {
        return Err(Error::Domain(format!(
            "threshold must be positive, got {a_n}"
        )));
    }
    let d = est.dim();
    let collapse = classical_collapses(&est.theta_hat, c, a_n);
    let (theta_tilde, selected) = if collapse {
        (c.to_vec(), IndexPartition::empty(d))
    } else {
        (est.theta_hat.clone(), IndexPartition::full(d))
    };
    Ok(HodgesResult {
        theta_tilde,
        selected,
        center: c.to_vec(),
        thresholds: vec![a_n],
    })
}

/// Writes `θ̂_b + G (θ̂_b̄ − c_b̄)` into `out_b` and `c_b̄` into `out_b̄`.
fn apply_correction(
    theta_hat: &[f64],
    c: &[f64],
    b: &IndexPartition,
    gain: &DMatrix<f64>,
    out: &mut [f64],
) {
    for (row, &i) in b.active().iter().enumerate() {
        let mut shift = 0.0;
        for (col, &j) in b.inactive().iter().enumerate() {
            shift += gain[(row, col)] * (theta_hat[j] - c[j]);
        }
        out[i] = theta_hat[i] + shift;
    }
    for &j in b.inactive() {
        out[j] = c[j];
    }
}

fn selection_flags(theta_hat: &[f64], c: &[f64], a: &[f64]) -> Vec<bool> {
    theta_hat
        .iter()
        .zip(c)
        .zip(a)
        .map(|((t, c), a)| (t - c).abs() > *a)
        .collect()
}

fn check_thresholds(a: &[f64]) -> Result<()> {
    if a.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("thresholds must be positive".into()));
    }
    Ok(())
}

/// `θ̌(b)`: the base estimate with `b̄` pinned at `c` and `b` corrected.
fn estimate_on_support(
    theta_hat: &[f64],
    c: &[f64],
    v: &CovSpec,
    b: &IndexPartition,
) -> Result<Vec<f64>> {
    if b.is_full() {
        return Ok(theta_hat.to_vec());
    }
    if b.is_empty() {
        return Ok(c.to_vec());
    }
    let gain = correction_gain(v, b)?;
    let mut out = vec![0.0; theta_hat.len()];
    apply_correction(theta_hat, c, b, &gain, &mut out);
    Ok(out)
}

/// The oracle Hodges' estimator with per-coordinate thresholds `a`.
pub fn oracle_hodges(est: &BaseEstimate, c: &[f64], a: &[f64]) -> Result<HodgesResult> {
    check_dim(est.dim(), c.len())?;
    check_dim(est.dim(), a.len())?;
    check_thresholds(a)?;
    let selected = IndexPartition::from_flags(&selection_flags(&est.theta_hat, c, a));
    let theta_tilde = estimate_on_support(&est.theta_hat, c, &est.v_hat, &selected)?;
    Ok(HodgesResult {
        theta_tilde,
        selected,
        center: c.to_vec(),
        thresholds: a.to_vec(),
    })
}

/// The oracle Hodges' estimator with the correction gains for every possible
/// selected set computed up front, for repeated application under a fixed `V̂`.
/// Produces bit-identical output to [`oracle_hodges`].
#[derive(Debug, Clone)]
pub struct OracleHodgesKernel {
    c: Vec<f64>,
    a: Vec<f64>,
    supports: Vec<(IndexPartition, DMatrix<f64>)>,
}

impl OracleHodgesKernel {
    pub const MAX_DIM: usize = 16;

    pub fn new(v: &CovSpec, c: &[f64], a: &[f64]) -> Result<Self> {
        let d = v.dim();
        check_dim(d, c.len())?;
        check_dim(d, a.len())?;
        check_thresholds(a)?;
        if d > Self::MAX_DIM {
            return Err(Error::Domain(format!(
                "kernel supports d ≤ {}, got {d}",
                Self::MAX_DIM
            )));
        }
        let mut supports = Vec::with_capacity(1 << d);
        for mask in 0u64..(1u64 << d) {
            let flags: Vec<bool> = (0..d).map(|j| mask >> j & 1 == 1).collect();
            let b = IndexPartition::from_flags(&flags);
            let gain = if b.is_empty() || b.is_full() {
                DMatrix::zeros(0, 0)
            } else {
                correction_gain(v, &b)?
            };
            supports.push((b, gain));
        }
        Ok(Self {
            c: c.to_vec(),
            a: a.to_vec(),
            supports,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.c
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.a
    }

    /// Writes the estimate into `out` and returns the selected-set mask.
    pub fn apply(&self, theta_hat: &[f64], out: &mut [f64]) -> u64 {
        debug_assert_eq!(theta_hat.len(), self.dim());
        let mut mask = 0u64;
        for (j, ((t, c), a)) in theta_hat.iter().zip(&self.c).zip(&self.a).enumerate() {
            if (t - c).abs() > *a {
                mask |= 1 << j;
            }
        }
        let (b, gain) = &self.supports[mask as usize];
        if b.is_full() {
            out.copy_from_slice(theta_hat);
        } else if b.is_empty() {
            out.copy_from_slice(&self.c);
        } else {
            apply_correction(theta_hat, &self.c, b, gain, out);
        }
        mask
    }
}

/// Shape of the transition between the dead zone and the outer estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Straight line from `(c ± a1, c)` to `(c ± a2, c ± a2)`.
    #[default]
    Linear,
    /// Parabola with zero slope at the inner knot; continuously differentiable
    /// where it leaves the dead zone.
    Quadratic,
}

impl Transition {
    /// Maps the relative position `t ∈ [0, 1]` inside the band to `[0, 1]`.
    fn shape(self, t: f64) -> f64 {
        match self {
            Transition::Linear => t,
            Transition::Quadratic => t * t,
        }
    }
}

/// Inner and outer thresholds of the smoothed estimator at a fixed sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
    #[serde(default)]
    pub transition: Transition,
}

impl SmoothConfig {
    pub fn new(inner: Vec<f64>, outer: Vec<f64>, transition: Transition) -> Result<Self> {
        let cfg = Self {
            inner,
            outer,
            transition,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.inner.len(), self.outer.len())?;
        for (j, (a1, a2)) in self.inner.iter().zip(&self.outer).enumerate() {
            if !(*a1 > 0.0 && a1 < a2 && a2.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "coordinate {j}: need 0 < inner < outer, got {a1} and {a2}"
                )));
            }
        }
        Ok(())
    }

    /// The increasing continuous map `f_j` on the band `a1 ≤ |x − c| ≤ a2`,
    /// with `f(c ± a1) = c` and `f(c ± a2) = c ± a2`.
    pub fn transition_value(&self, j: usize, x: f64, c: f64) -> f64 {
        let (a1, a2) = (self.inner[j], self.outer[j]);
        let dev = x - c;
        let t = ((dev.abs() - a1) / (a2 - a1)).clamp(0.0, 1.0);
        c + dev.signum() * a2 * self.transition.shape(t)
    }
}

/// Inner/outer threshold laws of the smoothed estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSchedule {
    pub inner: ThresholdSchedule,
    pub outer: ThresholdSchedule,
    #[serde(default)]
    pub transition: Transition,
}

impl SmoothSchedule {
    /// `a1 = r_n^(−1/2)`, `a2 = 2 r_n^(−1/2)` for a rate `r_n = n^g`.
    pub fn default_for(d: usize, rate: crate::schedule::RateSpec) -> Result<Self> {
        let decay = rate.growth / 2.0;
        let inner_scale = rate.scale.powf(-0.5);
        Ok(Self {
            inner: ThresholdSchedule::uniform(d, rate, PowerLaw::new(inner_scale, decay))?,
            outer: ThresholdSchedule::uniform(d, rate, PowerLaw::new(2.0 * inner_scale, decay))?,
            transition: Transition::Linear,
        })
    }

    pub fn at(&self, n: u64) -> Result<SmoothConfig> {
        SmoothConfig::new(
            self.inner.thresholds_at(n),
            self.outer.thresholds_at(n),
            self.transition,
        )
    }

    /// Checks `inner < outer` at every supplied `n` and that both schedules
    /// trend the admissible way over the range.
    pub fn validate(&self, n_values: &[u64]) -> Result<()> {
        for &n in n_values {
            self.at(n)?;
        }
        for (name, s) in [("inner", &self.inner), ("outer", &self.outer)] {
            if !validate_schedule(s, n_values)?.passed() {
                return Err(Error::Schedule(format!(
                    "{name} schedule does not shrink admissibly"
                )));
            }
        }
        Ok(())
    }
}

/// The continuous version of the oracle estimator: `c_j` inside the inner
/// threshold, the transition map in the band, and the outer-threshold oracle
/// estimate (evaluated once on the whole vector) beyond.
pub fn smooth_oracle_hodges(
    est: &BaseEstimate,
    c: &[f64],
    cfg: &SmoothConfig,
) -> Result<HodgesResult> {
    cfg.validate()?;
    check_dim(est.dim(), c.len())?;
    check_dim(est.dim(), cfg.inner.len())?;
    let outer = oracle_hodges(est, c, &cfg.outer)?;
    let d = est.dim();
    let mut theta_tilde = vec![0.0; d];
    let mut flags = vec![false; d];
    for j in 0..d {
        let x = est.theta_hat[j];
        let dev = (x - c[j]).abs();
        theta_tilde[j] = if dev <= cfg.inner[j] {
            c[j]
        } else if dev <= cfg.outer[j] {
            flags[j] = true;
            cfg.transition_value(j, x, c[j])
        } else {
            flags[j] = true;
            outer.theta_tilde[j]
        };
    }
    Ok(HodgesResult {
        theta_tilde,
        selected: IndexPartition::from_flags(&flags),
        center: c.to_vec(),
        thresholds: cfg.inner.clone(),
    })
}

/// The infeasible estimate that knows the true support `b(θ)`: the base
/// estimate restricted to `b(θ)`, corrected, with `c` on the complement.
pub fn pseudo_oracle_estimate(
    est: &BaseEstimate,
    true_theta: &[f64],
    c: &[f64],
) -> Result<Vec<f64>> {
    check_dim(est.dim(), true_theta.len())?;
    let b = partition_from_point(true_theta, c)?;
    estimate_on_support(&est.theta_hat, c, &est.v_hat, &b)
}
