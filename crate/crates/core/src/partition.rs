//! Active/inactive index sets, precision-matrix block algebra and the
//! parameter-space regions around a center point.
//!
//! For a center `c` and thresholds `a`, the space splits into
//!
//! - the *active region* `{θ : |θ_j − c_j| > a_j for every j}`,
//! - the *sparse set* `{θ : θ_j = c_j for some j}`,
//!
//! and their closed `k/r` tubes. Points at distance more than `k/r` from both
//! form the gap region, where the oracle Hodges' estimator cannot land within
//! `k/r` of the truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// A split of `{0, …, d−1}` into an ordered active set and its complement.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexPartition {
    d: usize,
    active: Vec<usize>,
    inactive: Vec<usize>,
}

impl IndexPartition {
    /// Builds the partition whose active set is `active` (any order, no duplicates).
    pub fn from_active(d: usize, active: &[usize]) -> Result<Self> {
        let mut flags = vec![false; d];
        for &j in active {
            if j >= d {
                return Err(Error::Domain(format!(
                    "index {j} out of range for dimension {d}"
                )));
            }
            if flags[j] {
                return Err(Error::Domain(format!("index {j} listed twice")));
            }
            flags[j] = true;
        }
        Ok(Self::from_flags(&flags))
    }

    /// `flags[j]` marks coordinate `j` as active.
    pub fn from_flags(flags: &[bool]) -> Self {
        let (active, inactive): (Vec<usize>, Vec<usize>) =
            (0..flags.len()).partition(|&j| flags[j]);
        Self {
            d: flags.len(),
            active,
            inactive,
        }
    }

    pub fn full(d: usize) -> Self {
        Self {
            d,
            active: (0..d).collect(),
            inactive: Vec::new(),
        }
    }

    pub fn empty(d: usize) -> Self {
        Self {
            d,
            active: Vec::new(),
            inactive: (0..d).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Active indices, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Inactive indices, ascending.
    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn is_full(&self) -> bool {
        self.inactive.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    /// Bit mask of the active set (bit `j` set for active `j`); requires `d ≤ 64`.
    pub fn mask(&self) -> u64 {
        debug_assert!(self.d <= 64);
        self.active.iter().fold(0, |m, &j| m | (1u64 << j))
    }
}

/// `b(θ) = {j : θ_j ≠ c_j}` with exact floating comparison.
pub fn partition_from_point(theta: &[f64], c: &[f64]) -> Result<IndexPartition> {
    check_dim(theta.len(), c.len())?;
    if theta.is_empty() {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let flags: Vec<bool> = theta.iter().zip(c).map(|(t, c)| t != c).collect();
    Ok(IndexPartition::from_flags(&flags))
}

/// A symmetric positive-definite precision matrix `V`; the covariance of the
/// limit law is `V⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSpec {
    v: DMatrix<f64>,
}

impl CovSpec {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if !v.is_square() || v.nrows() == 0 {
            return Err(Error::InvalidSpec(format!(
                "precision matrix must be square and nonempty, got {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(
                "precision matrix has non-finite entries".into(),
            ));
        }
        if !linalg::is_symmetric(&v, 1e-12) {
            return Err(Error::InvalidSpec(
                "precision matrix is not symmetric".into(),
            ));
        }
        if linalg::min_eigenvalue(&v) <= 0.0 {
            return Err(Error::InvalidSpec(
                "precision matrix is not positive definite".into(),
            ));
        }
        Ok(Self { v })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            v: DMatrix::identity(d, d),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(diag),
        ))
    }

    /// Precision from a covariance matrix `Σ` (so `V = Σ⁻¹`).
    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        Self::new(linalg::spd_inverse(sigma, "covariance")?)
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        linalg::submatrix(&self.v, rows, cols)
    }

    /// `V⁻¹`, the covariance of the limit law.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.v, "V")
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.v[(i, j)] == 0.0))
    }
}

fn check_partition(v: &CovSpec, b: &IndexPartition) -> Result<()> {
    check_dim(v.dim(), b.dim())?;
    if b.is_empty() {
        return Err(Error::Domain("active set b is empty".into()));
    }
    Ok(())
}

/// `Δ_b = (V_bb − V_bb̄ V_b̄b̄⁻¹ V_b̄b)⁻¹`, the asymptotic covariance of the
/// active block of the base estimator. Equals `V⁻¹` when `b` is full.
pub fn schur_asymptotic_cov(v: &CovSpec, b: &IndexPartition) -> Result<DMatrix<f64>> {
    check_partition(v, b)?;
    let (act, inact) = (b.active(), b.inactive());
    let v_bb = v.block(act, act);
    if inact.is_empty() {
        return linalg::spd_inverse(&v_bb, "V");
    }
    let v_bbar = v.block(act, inact);
    let v_barbar = v.block(inact, inact);
    let solved = linalg::spd_solve(&v_barbar, &v_bbar.transpose(), "V_b̄b̄")?;
    let schur = linalg::symmetrize(&(v_bb - &v_bbar * solved));
    linalg::spd_inverse(&schur, "Schur complement")
}

/// `V_bb⁻¹`, the covariance of the oracle limit on the active block.
pub fn oracle_block_cov(v: &CovSpec, b: &IndexPartition) -> Result<DMatrix<f64>> {
    check_partition(v, b)?;
    linalg::spd_inverse(&v.block(b.active(), b.active()), "V_bb")
}

/// `V_bb⁻¹ V_bb̄`, the gain that corrects the active block for the deviation of
/// the inactive block from the center. Shape `|b| × |b̄|`.
pub fn correction_gain(v: &CovSpec, b: &IndexPartition) -> Result<DMatrix<f64>> {
    check_partition(v, b)?;
    if b.is_full() {
        return Err(Error::Domain(
            "active set b is the full index set; no correction".into(),
        ));
    }
    let v_bb = v.block(b.active(), b.active());
    let v_bbar = v.block(b.active(), b.inactive());
    linalg::spd_solve(&v_bb, &v_bbar, "V_bb")
}

/// Distance from `theta` to the sparse set `{θ : θ_j = c_j for some j}`.
pub fn dist_to_sparse_set(theta: &[f64], c: &[f64]) -> Result<f64> {
    check_dim(theta.len(), c.len())?;
    if theta.is_empty() {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(theta
        .iter()
        .zip(c)
        .map(|(t, c)| (t - c).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Center, thresholds, rate and margin defining the regions around `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub k: f64,
}

impl RegionSpec {
    pub fn new(c: Vec<f64>, a: Vec<f64>, r: f64, k: f64) -> Result<Self> {
        check_dim(c.len(), a.len())?;
        if c.is_empty() {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if a.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Schedule(
                "thresholds must be positive and finite".into(),
            ));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Schedule(format!("rate must be positive, got {r}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("margin k must be positive, got {k}")));
        }
        Ok(Self { c, a, r, k })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Tube radius `k / r`.
    pub fn tube(&self) -> f64 {
        self.k / self.r
    }

    pub fn min_threshold(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `r · min_j a_j > 2k`: the two tubes are disjoint.
    pub fn tubes_disjoint(&self) -> bool {
        self.r * self.min_threshold() > 2.0 * self.k
    }

    /// Membership in the open active region: `|θ_j − c_j| > a_j` for all `j`.
    pub fn in_active_region(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.c)
            .zip(&self.a)
            .all(|((t, c), a)| (t - c).abs() > *a)
    }

    /// Membership in the sparse set: some `θ_j == c_j` exactly.
    pub fn in_sparse_set(&self, theta: &[f64]) -> bool {
        theta.iter().zip(&self.c).any(|(t, c)| t == c)
    }
}

/// Distance from `theta` to the active region. The region is a product of
/// complements of intervals, so the nearest point moves each deficient
/// coordinate out to its threshold independently:
/// `sqrt(Σ_j max(0, a_j − |θ_j − c_j|)²)`.
pub fn dist_to_active_region(theta: &[f64], spec: &RegionSpec) -> Result<f64> {
    check_dim(spec.dim(), theta.len())?;
    let sq: f64 = theta
        .iter()
        .zip(&spec.c)
        .zip(&spec.a)
        .map(|((t, c), a)| {
            let gap = (a - (t - c).abs()).max(0.0);
            gap * gap
        })
        .sum();
    Ok(sq.sqrt())
}

/// Which `k/r` neighbourhood a point falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Within `k/r` of the active region.
    ActiveTube,
    /// Within `k/r` of the sparse set.
    SparseTube,
    /// Farther than `k/r` from both.
    Gap,
}

/// Labels `theta`; requires `r · min_j a_j > 2k` so the tubes cannot overlap.
pub fn classify_region(theta: &[f64], spec: &RegionSpec) -> Result<Region> {
    if !spec.tubes_disjoint() {
        return Err(Error::Schedule(format!(
            "r·min a = {} ≤ 2k = {}; tubes around the active region and the sparse set overlap",
            spec.r * spec.min_threshold(),
            2.0 * spec.k
        )));
    }
    let tube = spec.tube();
    if dist_to_active_region(theta, spec)? <= tube {
        Ok(Region::ActiveTube)
    } else if dist_to_sparse_set(theta, &spec.c)? <= tube {
        Ok(Region::SparseTube)
    } else {
        Ok(Region::Gap)
    }
}
