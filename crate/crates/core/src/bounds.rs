//! Sample-path checks of the finite-sample lower bounds on the scaled error of
//! the classical and oracle estimators, and the deterministic bound tables.
//!
//! Both bounds hold for every realization of `θ̂`, so the checks use no
//! tolerance: a single realization with `r‖θ̃ − θ‖ < k` is a violation.
//! Realizations alternate between Gaussian draws `θ + N(0, V⁻¹)/r` and
//! adversarial draws spread uniformly over the box `c ± 2a`, which exercises
//! both the collapsed and the non-collapsed branch.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimators::{classical_collapses, OracleHodgesKernel};
use crate::linalg;
use crate::partition::{classify_region, CovSpec, Region, RegionSpec};
use crate::risk::LossSpec;
use crate::rng::{domain, substream};
use crate::schedule::ThresholdSchedule;

const BATCH: usize = 1 << 14;
const MAX_LISTED_VIOLATIONS: usize = 20;
const MAX_REJECTIONS: usize = 1_000_000;

fn norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// The ring `k ≤ r‖θ − c‖ ≤ a r − k` on which the classical estimator's
/// scaled error is at least `k` for every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub c: Vec<f64>,
    pub k: f64,
    pub r: f64,
    pub a: f64,
}

/// Builds the ring; `a r = 2k` gives the sphere `‖θ − c‖ = a/2`.
pub fn ring_region(c: &[f64], k: f64, r_n: f64, a_n: f64) -> Result<Ring> {
    if c.is_empty() {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(k > 0.0 && k.is_finite() && r_n > 0.0 && r_n.is_finite() && a_n > 0.0 && a_n.is_finite()) {
        return Err(Error::Domain(
            "k, r_n and a_n must be positive and finite".into(),
        ));
    }
    if a_n * r_n < 2.0 * k {
        return Err(Error::Schedule(format!(
            "empty ring: a_n·r_n = {} < 2k = {}",
            a_n * r_n,
            2.0 * k
        )));
    }
    Ok(Ring {
        c: c.to_vec(),
        k,
        r: r_n,
        a: a_n,
    })
}

impl Ring {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn inner_radius(&self) -> f64 {
        self.k / self.r
    }

    pub fn outer_radius(&self) -> f64 {
        self.a - self.k / self.r
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() {
            return false;
        }
        let s = self.r * norm_diff(theta, &self.c);
        s >= self.k && s <= self.a * self.r - self.k
    }

    /// Uniform direction, radius uniform on `[k/r, a − k/r]`. Draws that
    /// land outside the ring through rounding at its edges are redrawn.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lo, hi) = (self.inner_radius(), self.outer_radius());
        loop {
            let mut dir: Vec<f64> = (0..self.dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len == 0.0 {
                continue;
            }
            let radius = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            for (x, c) in dir.iter_mut().zip(&self.c) {
                *x = c + radius * *x / len;
            }
            if self.contains(&dir) {
                return dir;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub theta: Vec<f64>,
    pub realization: Vec<f64>,
    pub output: Vec<f64>,
    pub scaled_error: f64,
}

/// Outcome of checking one parameter point against a batch of realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub checked: u64,
    pub violation_count: u64,
    pub violations: Vec<Violation>,
    /// Outputs outside the active region and the sparse set (oracle only).
    pub range_violations: u64,
    /// Smallest `r‖θ̃ − θ‖` seen.
    pub min_scaled_error: f64,
}

impl Default for PointCheck {
    fn default() -> Self {
        Self {
            checked: 0,
            violation_count: 0,
            violations: Vec::new(),
            range_violations: 0,
            min_scaled_error: f64::INFINITY,
        }
    }
}

impl PointCheck {
    pub fn merge(mut self, other: PointCheck) -> PointCheck {
        self.checked += other.checked;
        self.violation_count += other.violation_count;
        self.range_violations += other.range_violations;
        self.min_scaled_error = self.min_scaled_error.min(other.min_scaled_error);
        let room = MAX_LISTED_VIOLATIONS.saturating_sub(self.violations.len());
        self.violations
            .extend(other.violations.into_iter().take(room));
        self
    }

    fn record(&mut self, theta: &[f64], realization: &[f64], output: &[f64], r: f64, k: f64) {
        self.checked += 1;
        let scaled = r * norm_diff(output, theta);
        self.min_scaled_error = self.min_scaled_error.min(scaled);
        if !(scaled >= k) {
            self.violation_count += 1;
            if self.violations.len() < MAX_LISTED_VIOLATIONS {
                self.violations.push(Violation {
                    theta: theta.to_vec(),
                    realization: realization.to_vec(),
                    output: output.to_vec(),
                    scaled_error: scaled,
                });
            }
        }
    }
}

fn check_realizations(d: usize, realizations: &[f64]) -> Result<()> {
    if !realizations.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: realizations.len() % d,
        });
    }
    Ok(())
}

/// Applies the classical estimator to each realization (rows of length `d`
/// in `realizations`) and checks `r‖θ̆ − θ‖ ≥ k`.
pub fn verify_classical_bound(
    ring: &Ring,
    theta: &[f64],
    realizations: &[f64],
) -> Result<PointCheck> {
    check_dim(ring.dim(), theta.len())?;
    check_realizations(ring.dim(), realizations)?;
    if !ring.contains(theta) {
        return Err(Error::Contract(format!("θ = {theta:?} is not in the ring")));
    }
    let mut check = PointCheck::default();
    for x in realizations.chunks_exact(ring.dim()) {
        let output: &[f64] = if classical_collapses(x, &ring.c, ring.a) {
            &ring.c
        } else {
            x
        };
        check.record(theta, x, output, ring.r, ring.k);
    }
    Ok(check)
}

/// Applies the oracle estimator to each realization and checks the range
/// invariant and `r‖θ̃ − θ‖ ≥ k` for a point of the gap region.
pub fn verify_oracle_bound(
    spec: &RegionSpec,
    v: &CovSpec,
    theta: &[f64],
    realizations: &[f64],
) -> Result<PointCheck> {
    check_dim(spec.dim(), v.dim())?;
    let kernel = OracleHodgesKernel::new(v, &spec.c, &spec.a)?;
    check_gap_point(spec, theta)?;
    check_realizations(spec.dim(), realizations)?;
    Ok(oracle_check(&kernel, spec, theta, realizations))
}

fn check_gap_point(spec: &RegionSpec, theta: &[f64]) -> Result<()> {
    check_dim(spec.dim(), theta.len())?;
    match classify_region(theta, spec)? {
        Region::Gap => Ok(()),
        other => Err(Error::Contract(format!(
            "θ = {theta:?} lies in {other:?}, not in the gap region"
        ))),
    }
}

fn oracle_check(
    kernel: &OracleHodgesKernel,
    spec: &RegionSpec,
    theta: &[f64],
    realizations: &[f64],
) -> PointCheck {
    let mut check = PointCheck::default();
    let mut out = vec![0.0; spec.dim()];
    for x in realizations.chunks_exact(spec.dim()) {
        kernel.apply(x, &mut out);
        if !(spec.in_active_region(&out) || spec.in_sparse_set(&out)) {
            check.range_violations += 1;
        }
        check.record(theta, x, &out, spec.r, spec.k);
    }
    check
}

/// Number of parameter points, realizations per point and seed of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub points: usize,
    pub realizations_per_point: usize,
    pub seed: u64,
}

/// Aggregate result of a verification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `classical` or `oracle`.
    pub theorem: String,
    /// `ring` or `gap`.
    pub region: String,
    pub n: Option<u64>,
    pub k: f64,
    pub r_n: f64,
    pub thresholds: Vec<f64>,
    pub center: Vec<f64>,
    /// Smallest `n` at which the schedule makes the region nonempty.
    pub min_sample_size: Option<u64>,
    pub points_checked: usize,
    pub realizations_per_point: usize,
    pub points: Vec<Vec<f64>>,
    pub violation_count: u64,
    pub violations: Vec<Violation>,
    pub range_violations: u64,
    /// Per point, the smallest scaled error observed; each must be ≥ k.
    pub bound_values: Vec<f64>,
    pub min_scaled_error: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0 && self.range_violations == 0
    }
}

/// Fills `buf` with realizations around `theta`: even rows Gaussian with
/// covariance `chol chol'`/r², odd rows uniform over `c ± 2a`.
fn fill_realizations(
    rng: &mut ChaCha8Rng,
    theta: &[f64],
    c: &[f64],
    a: &[f64],
    chol: &DMatrix<f64>,
    r: f64,
    buf: &mut [f64],
) {
    let d = theta.len();
    let mut z = vec![0.0; d];
    for (i, row) in buf.chunks_exact_mut(d).enumerate() {
        if i % 2 == 0 {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            for j in 0..d {
                let mut acc = 0.0;
                for s in 0..=j {
                    acc += chol[(j, s)] * z[s];
                }
                row[j] = theta[j] + acc / r;
            }
        } else {
            for j in 0..d {
                row[j] = c[j] + rng.random_range(-2.0 * a[j]..2.0 * a[j]);
            }
        }
    }
}

fn run_sweep(
    points: &[Vec<f64>],
    sweep: &SweepSpec,
    d: usize,
    check: impl Fn(usize, &mut ChaCha8Rng, &mut [f64]) -> PointCheck + Sync,
) -> Vec<PointCheck> {
    let batches = sweep.realizations_per_point.div_ceil(BATCH);
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..batches).map(move |b| (p, b)))
        .collect();
    let results: Vec<PointCheck> = tasks
        .par_iter()
        .map(|&(p, b)| {
            let len = BATCH.min(sweep.realizations_per_point - b * BATCH);
            let mut rng = substream(sweep.seed, &[domain::BOUNDS, p as u64, b as u64]);
            let mut buf = vec![0.0; len * d];
            check(p, &mut rng, &mut buf)
        })
        .collect();
    results
        .chunks(batches.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .cloned()
                .fold(PointCheck::default(), PointCheck::merge)
        })
        .collect()
}

fn point_stream(seed: u64) -> ChaCha8Rng {
    substream(seed, &[domain::BOUNDS, u64::MAX])
}

fn validate_sweep(sweep: &SweepSpec) -> Result<()> {
    if sweep.points == 0 || sweep.realizations_per_point == 0 {
        return Err(Error::InvalidSpec(
            "sweep needs at least one point and one realization".into(),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    theorem: &str,
    region: &str,
    k: f64,
    r_n: f64,
    thresholds: Vec<f64>,
    center: Vec<f64>,
    sweep: &SweepSpec,
    points: Vec<Vec<f64>>,
    checks: Vec<PointCheck>,
) -> BoundReport {
    let bound_values: Vec<f64> = checks.iter().map(|c| c.min_scaled_error).collect();
    let total = checks
        .into_iter()
        .fold(PointCheck::default(), PointCheck::merge);
    BoundReport {
        theorem: theorem.into(),
        region: region.into(),
        n: None,
        k,
        r_n,
        thresholds,
        center,
        min_sample_size: None,
        points_checked: points.len(),
        realizations_per_point: sweep.realizations_per_point,
        points,
        violation_count: total.violation_count,
        violations: total.violations,
        range_violations: total.range_violations,
        min_scaled_error: total.min_scaled_error,
        bound_values,
    }
}

/// Checks the classical bound at `sweep.points` ring points drawn with
/// [`Ring::sample`], each against `realizations_per_point` realizations.
pub fn classical_bound_sweep(ring: &Ring, sweep: &SweepSpec) -> Result<BoundReport> {
    validate_sweep(sweep)?;
    let d = ring.dim();
    let mut prng = point_stream(sweep.seed);
    let points: Vec<Vec<f64>> = (0..sweep.points).map(|_| ring.sample(&mut prng)).collect();
    let chol = DMatrix::identity(d, d);
    let a = vec![ring.a; d];
    let checks = run_sweep(&points, sweep, d, |p, rng, buf| {
        fill_realizations(rng, &points[p], &ring.c, &a, &chol, ring.r, buf);
        verify_classical_bound(ring, &points[p], buf).expect("sampled points lie in the ring")
    });
    Ok(assemble(
        "classical",
        "ring",
        ring.k,
        ring.r,
        vec![ring.a],
        ring.c.clone(),
        sweep,
        points,
        checks,
    ))
}

/// Draws a gap-region point uniformly from the box `c ± 2a` by rejection.
pub fn sample_gap_point(spec: &RegionSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !spec.tubes_disjoint() {
        classify_region(&spec.c, spec)?;
    }
    for _ in 0..MAX_REJECTIONS {
        let theta: Vec<f64> = spec
            .c
            .iter()
            .zip(&spec.a)
            .map(|(c, a)| c + rng.random_range(-2.0 * a..2.0 * a))
            .collect();
        if classify_region(&theta, spec)? == Region::Gap {
            return Ok(theta);
        }
    }
    Err(Error::Domain(
        "gap region too thin to sample by rejection".into(),
    ))
}

/// Checks the oracle bound and the range invariant at `sweep.points` gap
/// points. `v` is the precision used by the estimator; Gaussian
/// realizations are drawn with covariance `V⁻¹/r²`.
pub fn oracle_bound_sweep(
    spec: &RegionSpec,
    v: &CovSpec,
    sweep: &SweepSpec,
) -> Result<BoundReport> {
    validate_sweep(sweep)?;
    check_dim(spec.dim(), v.dim())?;
    let d = spec.dim();
    let kernel = OracleHodgesKernel::new(v, &spec.c, &spec.a)?;
    let chol = linalg::spd_cholesky(&v.covariance()?, "V⁻¹")?.l();
    let mut prng = point_stream(sweep.seed);
    let points = (0..sweep.points)
        .map(|_| sample_gap_point(spec, &mut prng))
        .collect::<Result<Vec<_>>>()?;
    let checks = run_sweep(&points, sweep, d, |p, rng, buf| {
        fill_realizations(rng, &points[p], &spec.c, &spec.a, &chol, spec.r, buf);
        oracle_check(&kernel, spec, &points[p], buf)
    });
    Ok(assemble(
        "oracle",
        "gap",
        spec.k,
        spec.r,
        spec.a.clone(),
        spec.c.clone(),
        sweep,
        points,
        checks,
    ))
}

/// Deterministic lower bounds at the worst-case points of one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: u64,
    pub r_n: f64,
    pub thresholds: Vec<f64>,
    /// `r_n a_nj / 2`: the scaled-error bound when coordinate `j` sits at
    /// `c_j ± a_nj/2` and every other coordinate at `c_i + 2a_ni`.
    pub bounds: Vec<f64>,
    pub squared_bounds: Vec<f64>,
}

/// The worst-case point for coordinate `j`.
pub fn probe_point(c: &[f64], a: &[f64], j: usize) -> Vec<f64> {
    c.iter()
        .zip(a)
        .enumerate()
        .map(|(i, (c, a))| if i == j { c + a / 2.0 } else { c + 2.0 * a })
        .collect()
}

pub fn worst_case_probe(schedule: &ThresholdSchedule, n_values: &[u64]) -> Result<Vec<ProbeRow>> {
    if n_values.is_empty() || n_values[0] == 0 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Schedule(
            "n values must be positive and strictly increasing".into(),
        ));
    }
    Ok(n_values
        .iter()
        .map(|&n| {
            let r_n = schedule.rate_at(n);
            let thresholds = schedule.thresholds_at(n);
            let bounds: Vec<f64> = thresholds.iter().map(|a| r_n * a / 2.0).collect();
            let squared_bounds = bounds.iter().map(|b| b * b).collect();
            ProbeRow {
                n,
                r_n,
                thresholds,
                bounds,
                squared_bounds,
            }
        })
        .collect())
}

/// Lower bounds implied for a loss family at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryRow {
    pub n: u64,
    pub r_n: f64,
    /// Whether `r_n min_j a_nj > 2k`, i.e. the bound applies at this `n`.
    pub applies: bool,
    /// Bound on the scaled risk for parameters in the ring or gap region.
    pub region_bound: f64,
    /// Bound at the worst-case points `c_j ± a_nj/2`.
    pub worst_case_bound: f64,
    /// Limit of `region_bound` as `n → ∞`, when finite.
    pub limit: Option<f64>,
}

/// Evaluates the region and worst-case bounds a loss inherits from
/// `r‖θ̃ − θ‖ ≥ k` and `r‖θ̃ − θ‖ ≥ r a/2`.
pub fn loss_corollary_check(
    loss: &LossSpec,
    schedule: &ThresholdSchedule,
    k: f64,
    n_values: &[u64],
) -> Result<Vec<CorollaryRow>> {
    loss.validate()?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("margin k must be positive, got {k}")));
    }
    if let LossSpec::Indicator { z } = loss {
        if *z > k {
            return Err(Error::Domain(format!(
                "indicator threshold z = {z} exceeds k = {k}; no bound follows"
            )));
        }
    }
    let rows = worst_case_probe(schedule, n_values)?;
    Ok(rows
        .into_iter()
        .map(|row| {
            let r = row.r_n;
            let half = row.thresholds.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
            let applies = r * 2.0 * half > 2.0 * k;
            let (region_bound, worst_case_bound, limit) = match loss {
                LossSpec::ScaledMse => (k * k, (r * half) * (r * half), Some(k * k)),
                LossSpec::Power { loss: l } => {
                    let unit = l.eval(1.0 / r);
                    (
                        l.eval(k / r) / unit,
                        l.eval(half) / unit,
                        Some(k.powf(l.order())),
                    )
                }
                LossSpec::RateLoss { loss: l } => (l.eval(k), l.eval(r * half), Some(l.eval(k))),
                LossSpec::Indicator { z } => {
                    (1.0, if r * half > *z { 1.0 } else { 0.0 }, Some(1.0))
                }
            };
            CorollaryRow {
                n: row.n,
                r_n: r,
                applies,
                region_bound,
                worst_case_bound,
                limit,
            }
        })
        .collect())
}
