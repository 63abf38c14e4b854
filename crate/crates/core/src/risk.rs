//! Monte Carlo risk of the estimators over θ-grids, the closed-form Gaussian
//! risk of the classical estimator, and the oracle-property diagnostics.
//!
//! Replication `i` at every grid point draws from the substream
//! `(seed, [RISK, i])`, so all grid points and all estimators see common
//! random numbers and the curves are smooth in θ. Results are written into
//! preallocated slots and reduced sequentially, so they do not depend on the
//! size of the thread pool.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{coordinate_descent_pls, threshold, PenaltySpec};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{
    classical_hodges, oracle_hodges, pseudo_oracle_estimate, smooth_oracle_hodges, BaseEstimate,
    OracleHodgesKernel, SmoothConfig, Transition,
};
use crate::models::{BaseSampler, DesignSpec, DgpSpec, Draw, Sampling};
use crate::normal;
use crate::partition::{
    oracle_block_cov, partition_from_point, schur_asymptotic_cov, IndexPartition,
};
use crate::rng::{domain, substream};
use crate::schedule::PowerLaw;

const CD_TOL: f64 = 1e-10;
const CD_MAX_ITER: usize = 10_000;

/// A nondecreasing loss `l` on `[0, ∞)` with `l(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFn {
    /// `u^p`.
    Power { p: f64 },
    /// `Σ_i coeffs[i] · u^(i+1)` with nonnegative coefficients.
    Polynomial { coeffs: Vec<f64> },
}

impl LossFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossFn::Power { p } if !(*p >= 1.0 && p.is_finite()) => Err(Error::InvalidSpec(
                format!("loss exponent must be ≥ 1, got {p}"),
            )),
            LossFn::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !(*c >= 0.0 && c.is_finite()))
                    || coeffs.iter().all(|&c| c == 0.0)
                {
                    return Err(Error::InvalidSpec(
                        "polynomial loss needs nonnegative coefficients, not all zero".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            LossFn::Power { p } => {
                if *p == 2.0 {
                    u * u
                } else {
                    u.powf(*p)
                }
            }
            LossFn::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| (acc + c) * u),
        }
    }

    /// The power `p` with `l(u) ~ u^p` as `u → 0`.
    pub fn order(&self) -> f64 {
        match self {
            LossFn::Power { p } => *p,
            LossFn::Polynomial { coeffs } => coeffs
                .iter()
                .position(|&c| c > 0.0)
                .map_or(0.0, |i| (i + 1) as f64),
        }
    }

    fn id(&self) -> String {
        match self {
            LossFn::Power { p } => format!("p{p}"),
            LossFn::Polynomial { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                format!("poly{}", parts.join("_"))
            }
        }
    }
}

/// How the error `e = θ̃ − θ` of one replication is turned into a loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec {
    /// `r_n² ‖e‖²`.
    ScaledMse,
    /// `l(‖e‖) / l(1/r_n)`.
    Power { loss: LossFn },
    /// `l(r_n ‖e‖)`.
    RateLoss { loss: LossFn },
    /// `1{r_n ‖e‖ > z}`.
    Indicator { z: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::ScaledMse => Ok(()),
            LossSpec::Power { loss } | LossSpec::RateLoss { loss } => loss.validate(),
            LossSpec::Indicator { z } if !(*z >= 0.0 && z.is_finite()) => Err(Error::InvalidSpec(
                format!("indicator threshold must be ≥ 0, got {z}"),
            )),
            LossSpec::Indicator { .. } => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        match self {
            LossSpec::ScaledMse => "scaled_mse".into(),
            LossSpec::Power { loss } => format!("power_{}", loss.id()),
            LossSpec::RateLoss { loss } => format!("rate_loss_{}", loss.id()),
            LossSpec::Indicator { z } => format!("indicator_z{z}"),
        }
    }

    /// Loss of an error with Euclidean norm `err` at rate `r`.
    pub fn eval(&self, err: f64, r: f64) -> f64 {
        match self {
            LossSpec::ScaledMse => {
                let s = r * err;
                s * s
            }
            LossSpec::Power { loss } => loss.eval(err) / loss.eval(1.0 / r),
            LossSpec::RateLoss { loss } => loss.eval(r * err),
            LossSpec::Indicator { z } => {
                if r * err > *z {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// An estimator applied to each simulated base estimate.
///
/// `Threshold` shrinks `θ̂` coordinatewise with the penalty's thresholding
/// rule, except on linear-model data where it minimizes the penalized least
/// squares objective by coordinate descent. `Oracle` is the infeasible
/// estimator that is told `b(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Base,
    ClassicalHodges {
        center: Vec<f64>,
        threshold: PowerLaw,
    },
    OracleHodges {
        center: Vec<f64>,
        thresholds: Vec<PowerLaw>,
    },
    SmoothOracleHodges {
        center: Vec<f64>,
        inner: Vec<PowerLaw>,
        outer: Vec<PowerLaw>,
        #[serde(default)]
        transition: Transition,
    },
    Threshold {
        penalty: PenaltySpec,
    },
    Oracle {
        center: Vec<f64>,
    },
}

impl EstimatorSpec {
    /// The classical estimator with `a_n = n^(−1/4)`.
    pub fn classical_default(center: Vec<f64>) -> Self {
        EstimatorSpec::ClassicalHodges {
            center,
            threshold: PowerLaw::new(1.0, 0.25),
        }
    }

    /// The oracle estimator with `a_nj = n^(−1/4)` in every coordinate.
    pub fn oracle_default(center: Vec<f64>) -> Self {
        let thresholds = vec![PowerLaw::new(1.0, 0.25); center.len()];
        EstimatorSpec::OracleHodges { center, thresholds }
    }

    pub fn id(&self) -> String {
        match self {
            EstimatorSpec::Base => "base".into(),
            EstimatorSpec::ClassicalHodges { .. } => "classical_hodges".into(),
            EstimatorSpec::OracleHodges { .. } => "oracle_hodges".into(),
            EstimatorSpec::SmoothOracleHodges { .. } => "smooth_oracle_hodges".into(),
            EstimatorSpec::Threshold { penalty } => {
                format!("{}_lambda{}", penalty.name(), penalty.lambda)
            }
            EstimatorSpec::Oracle { .. } => "oracle".into(),
        }
    }

    /// The point selection is measured against; the origin when the
    /// estimator has no center of its own.
    pub fn center(&self, d: usize) -> Vec<f64> {
        match self {
            EstimatorSpec::ClassicalHodges { center, .. }
            | EstimatorSpec::OracleHodges { center, .. }
            | EstimatorSpec::SmoothOracleHodges { center, .. }
            | EstimatorSpec::Oracle { center } => center.clone(),
            EstimatorSpec::Base | EstimatorSpec::Threshold { .. } => vec![0.0; d],
        }
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        match self {
            EstimatorSpec::Base => Ok(()),
            EstimatorSpec::ClassicalHodges { center, .. } | EstimatorSpec::Oracle { center } => {
                check_dim(d, center.len())
            }
            EstimatorSpec::OracleHodges { center, thresholds } => {
                check_dim(d, center.len())?;
                check_dim(d, thresholds.len())
            }
            EstimatorSpec::SmoothOracleHodges {
                center,
                inner,
                outer,
                ..
            } => {
                check_dim(d, center.len())?;
                check_dim(d, inner.len())?;
                check_dim(d, outer.len())
            }
            EstimatorSpec::Threshold { penalty } => penalty.validate(),
        }
    }

    fn prepare(&self, dgp: &DgpSpec, n: u64, sampling: Sampling) -> Result<Prepared> {
        let d = dgp.dim();
        self.check_dims(d)?;
        Ok(match self {
            EstimatorSpec::Base => Prepared::Base,
            EstimatorSpec::ClassicalHodges { center, threshold } => Prepared::Classical {
                c: center.clone(),
                a: threshold.at(n),
            },
            EstimatorSpec::OracleHodges { center, thresholds } => {
                let a: Vec<f64> = thresholds.iter().map(|t| t.at(n)).collect();
                // Under exact normal sampling V̂ is the same in every replication.
                if matches!(dgp, DgpSpec::NormalMean { .. })
                    && sampling == Sampling::Exact
                    && d <= OracleHodgesKernel::MAX_DIM
                {
                    Prepared::Kernel(OracleHodgesKernel::new(&dgp.precision()?, center, &a)?)
                } else {
                    Prepared::Oracle {
                        c: center.clone(),
                        a,
                    }
                }
            }
            EstimatorSpec::SmoothOracleHodges {
                center,
                inner,
                outer,
                transition,
            } => {
                let cfg = SmoothConfig::new(
                    inner.iter().map(|t| t.at(n)).collect(),
                    outer.iter().map(|t| t.at(n)).collect(),
                    *transition,
                )?;
                Prepared::Smooth {
                    c: center.clone(),
                    cfg,
                }
            }
            EstimatorSpec::Threshold { penalty } => Prepared::Threshold {
                pen: *penalty,
                regression: matches!(dgp, DgpSpec::LinearModel { .. }),
            },
            EstimatorSpec::Oracle { center } => Prepared::Pseudo {
                c: center.clone(),
                truth: dgp.theta().to_vec(),
            },
        })
    }
}

enum Prepared {
    Base,
    Classical { c: Vec<f64>, a: f64 },
    Kernel(OracleHodgesKernel),
    Oracle { c: Vec<f64>, a: Vec<f64> },
    Smooth { c: Vec<f64>, cfg: SmoothConfig },
    Threshold { pen: PenaltySpec, regression: bool },
    Pseudo { c: Vec<f64>, truth: Vec<f64> },
}

impl Prepared {
    fn apply(&self, draw: &Draw, design: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
        let est: &BaseEstimate = &draw.base;
        Ok(match self {
            Prepared::Base => est.theta_hat.clone(),
            Prepared::Classical { c, a } => classical_hodges(est, c, *a)?.theta_tilde,
            Prepared::Kernel(kernel) => {
                let mut out = vec![0.0; est.dim()];
                kernel.apply(&est.theta_hat, &mut out);
                out
            }
            Prepared::Oracle { c, a } => oracle_hodges(est, c, a)?.theta_tilde,
            Prepared::Smooth { c, cfg } => smooth_oracle_hodges(est, c, cfg)?.theta_tilde,
            Prepared::Threshold {
                pen,
                regression: false,
            } => est.theta_hat.iter().map(|&z| threshold(z, pen)).collect(),
            Prepared::Threshold {
                pen,
                regression: true,
            } => {
                let (Some(y), Some(x)) = (draw.response.as_ref(), design) else {
                    return Err(Error::InvalidSpec(
                        "penalized regression needs linear-model data".into(),
                    ));
                };
                let fit = coordinate_descent_pls(y, x, pen, CD_TOL, CD_MAX_ITER)?;
                if !fit.converged {
                    return Err(Error::Contract(format!(
                        "coordinate descent did not converge in {CD_MAX_ITER} sweeps"
                    )));
                }
                fit.beta.to_vec()
            }
            Prepared::Pseudo { c, truth } => pseudo_oracle_estimate(est, truth, c)?,
        })
    }
}

/// A data-generating model with the parameter left open.
#[derive(Debug, Clone, PartialEq)]
pub enum DgpTemplate {
    NormalMean { cov: DMatrix<f64> },
    LinearModel { sigma2: f64, design: DesignSpec },
    UniformBox,
}

impl DgpTemplate {
    pub fn standard_normal(d: usize) -> Self {
        DgpTemplate::NormalMean {
            cov: DMatrix::identity(d, d),
        }
    }

    fn instantiator(&self, d: usize, n: u64) -> Result<Instantiator<'_>> {
        let design = match self {
            DgpTemplate::LinearModel { design, .. } => Some(design.materialize(n as usize, d)?),
            _ => None,
        };
        Ok(Instantiator {
            template: self,
            design,
        })
    }

    /// The model at parameter `theta` with sample size `n`.
    pub fn instantiate(&self, theta: &[f64], n: u64) -> Result<DgpSpec> {
        self.instantiator(theta.len(), n)?.at(theta)
    }
}

struct Instantiator<'a> {
    template: &'a DgpTemplate,
    design: Option<DMatrix<f64>>,
}

impl Instantiator<'_> {
    fn at(&self, theta: &[f64]) -> Result<DgpSpec> {
        let dgp = match self.template {
            DgpTemplate::NormalMean { cov } => DgpSpec::NormalMean {
                theta: theta.to_vec(),
                cov: cov.clone(),
            },
            DgpTemplate::LinearModel { sigma2, .. } => DgpSpec::LinearModel {
                beta: theta.to_vec(),
                sigma2: *sigma2,
                design: self
                    .design
                    .clone()
                    .expect("design materialized for linear templates"),
            },
            DgpTemplate::UniformBox => DgpSpec::UniformBox {
                theta: theta.to_vec(),
            },
        };
        dgp.validate()?;
        Ok(dgp)
    }
}

/// Sample size, replication count, seed and sampling mode of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub n: u64,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl RunSpec {
    pub fn new(n: u64, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            seed,
            sampling: Sampling::Exact,
        }
    }
}

/// Evenly spaced points along one axis through `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default)]
    pub axis: usize,
    /// Values of the other coordinates; the origin when empty.
    #[serde(default)]
    pub base: Vec<f64>,
}

impl GridSpec {
    pub fn line(start: f64, stop: f64, step: f64) -> Self {
        Self {
            start,
            stop,
            step,
            axis: 0,
            base: Vec::new(),
        }
    }

    /// The grid points in dimension `d`. When `start` is a multiple of
    /// `step` the points are computed as integer multiples of `step`, so
    /// values such as 0 and 1 land exactly on the grid.
    pub fn points(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        if !(self.step > 0.0
            && self.step.is_finite()
            && self.start.is_finite()
            && self.stop >= self.start)
        {
            return Err(Error::InvalidSpec(
                "grid needs finite start ≤ stop and a positive step".into(),
            ));
        }
        if self.axis >= d {
            return Err(Error::InvalidSpec(format!(
                "grid axis {} out of range for d = {d}",
                self.axis
            )));
        }
        let base = if self.base.is_empty() {
            vec![0.0; d]
        } else {
            self.base.clone()
        };
        check_dim(d, base.len())?;
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as i64 + 1;
        let offset = self.start / self.step;
        let aligned = (offset - offset.round()).abs() < 1e-9;
        Ok((0..count)
            .map(|i| {
                let mut p = base.clone();
                p[self.axis] = if aligned {
                    (offset.round() as i64 + i) as f64 * self.step
                } else {
                    self.start + i as f64 * self.step
                };
                p
            })
            .collect())
    }
}

/// Estimated risk of one estimator under one loss along a θ-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub estimator_id: String,
    pub loss_id: String,
    pub n: u64,
    pub theta_grid: Vec<Vec<f64>>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl RiskCurve {
    pub fn dim(&self) -> usize {
        self.theta_grid.first().map_or(0, Vec::len)
    }

    pub fn max_estimate(&self) -> (usize, f64) {
        self.estimates
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes curves in the risk CSV schema, preceded by `#`-prefixed preamble
/// lines. All curves must share the parameter dimension.
pub fn write_curves_csv<W: Write>(
    curves: &[RiskCurve],
    mut writer: W,
    preamble: &[String],
) -> Result<()> {
    let d = curves.first().map_or(1, RiskCurve::dim);
    for line in preamble {
        for part in line.lines() {
            writeln!(writer, "# {part}")?;
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["estimator_id".to_string(), "loss_id".into(), "n".into()];
    header.extend((1..=d).map(|j| format!("theta_{j}")));
    header.extend(["risk", "std_error", "reps", "seed"].map(String::from));
    w.write_record(&header)?;
    for curve in curves {
        check_dim(d, curve.dim())?;
        if curve.estimates.len() != curve.theta_grid.len()
            || curve.std_errors.len() != curve.theta_grid.len()
        {
            return Err(Error::Contract(
                "risk curve columns have unequal lengths".into(),
            ));
        }
        for ((theta, risk), se) in curve
            .theta_grid
            .iter()
            .zip(&curve.estimates)
            .zip(&curve.std_errors)
        {
            let mut row = vec![
                curve.estimator_id.clone(),
                curve.loss_id.clone(),
                curve.n.to_string(),
            ];
            row.extend(theta.iter().map(|&t| fmt_num(t)));
            row.extend([
                fmt_num(*risk),
                fmt_num(*se),
                curve.reps.to_string(),
                curve.seed.to_string(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves_file(curves: &[RiskCurve], path: &Path, preamble: &[String]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_curves_csv(curves, file, preamble)
}

/// Reads curves written by [`write_curves_csv`]; consecutive rows sharing
/// estimator, loss, n, reps and seed form one curve. Preamble lines are skipped.
pub fn read_curves_csv<R: Read>(reader: R) -> Result<Vec<RiskCurve>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let d = header
        .len()
        .checked_sub(7)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::InvalidSpec("risk CSV needs at least one theta column".into()))?;
    let mut expected = vec!["estimator_id".to_string(), "loss_id".into(), "n".into()];
    expected.extend((1..=d).map(|j| format!("theta_{j}")));
    expected.extend(["risk", "std_error", "reps", "seed"].map(String::from));
    if header != expected {
        return Err(Error::InvalidSpec(format!(
            "unexpected risk CSV header {header:?}"
        )));
    }
    let parse_f = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::InvalidSpec(format!("bad number {s:?}: {e}")))
    };
    let parse_u = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| Error::InvalidSpec(format!("bad integer {s:?}: {e}")))
    };
    let mut curves: Vec<RiskCurve> = Vec::new();
    for record in r.records() {
        let rec = record?;
        let n = parse_u(&rec[2])?;
        let theta = (0..d)
            .map(|j| parse_f(&rec[3 + j]))
            .collect::<Result<Vec<_>>>()?;
        let risk = parse_f(&rec[3 + d])?;
        let se = parse_f(&rec[4 + d])?;
        let reps = parse_u(&rec[5 + d])? as usize;
        let seed = parse_u(&rec[6 + d])?;
        let same = curves.last().is_some_and(|c| {
            c.estimator_id == rec[0]
                && c.loss_id == rec[1]
                && c.n == n
                && c.reps == reps
                && c.seed == seed
        });
        if !same {
            curves.push(RiskCurve {
                estimator_id: rec[0].to_string(),
                loss_id: rec[1].to_string(),
                n,
                theta_grid: Vec::new(),
                estimates: Vec::new(),
                std_errors: Vec::new(),
                reps,
                seed,
            });
        }
        let c = curves.last_mut().expect("pushed above");
        c.theta_grid.push(theta);
        c.estimates.push(risk);
        c.std_errors.push(se);
    }
    Ok(curves)
}

/// Neumaier-compensated sum, accumulated in slice order.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean (sample sd / √m).
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (m - 1.0)).sqrt() / m.sqrt())
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Monte Carlo risk of one estimator under one loss.
pub fn mc_risk(
    estimator: &EstimatorSpec,
    template: &DgpTemplate,
    grid: &[Vec<f64>],
    loss: &LossSpec,
    run: &RunSpec,
) -> Result<RiskCurve> {
    let mut curves = mc_risk_many(
        std::slice::from_ref(estimator),
        template,
        grid,
        std::slice::from_ref(loss),
        run,
    )?;
    Ok(curves.remove(0))
}

/// Monte Carlo risk of several estimators under several losses on the same
/// replications. Curves are returned estimator-major.
pub fn mc_risk_many(
    estimators: &[EstimatorSpec],
    template: &DgpTemplate,
    grid: &[Vec<f64>],
    losses: &[LossSpec],
    run: &RunSpec,
) -> Result<Vec<RiskCurve>> {
    if run.reps < 100 {
        return Err(Error::InvalidSpec(format!(
            "risk estimation needs at least 100 replications, got {}",
            run.reps
        )));
    }
    if grid.is_empty() || estimators.is_empty() || losses.is_empty() {
        return Err(Error::InvalidSpec(
            "grid, estimator list and loss list must be nonempty".into(),
        ));
    }
    for loss in losses {
        loss.validate()?;
    }
    let d = grid[0].len();
    for theta in grid {
        check_dim(d, theta.len())?;
    }
    let inst = template.instantiator(d, run.n)?;
    let m = estimators.len() * losses.len();
    let mut curves: Vec<RiskCurve> = estimators
        .iter()
        .flat_map(|e| {
            losses.iter().map(move |l| RiskCurve {
                estimator_id: e.id(),
                loss_id: l.id(),
                n: run.n,
                theta_grid: grid.to_vec(),
                estimates: Vec::with_capacity(grid.len()),
                std_errors: Vec::with_capacity(grid.len()),
                reps: run.reps,
                seed: run.seed,
            })
        })
        .collect();

    let mut slots = vec![0.0; run.reps * m];
    let mut column = vec![0.0; run.reps];
    for theta in grid {
        let dgp = inst.at(theta)?;
        let sampler = BaseSampler::new(&dgp, run.n as usize, run.sampling)?;
        let prepared = estimators
            .iter()
            .map(|e| e.prepare(&dgp, run.n, run.sampling))
            .collect::<Result<Vec<_>>>()?;
        let design = sampler.design();
        slots
            .par_chunks_mut(m)
            .enumerate()
            .try_for_each(|(rep, out)| -> Result<()> {
                let mut rng = substream(run.seed, &[domain::RISK, rep as u64]);
                let draw = sampler.draw(&mut rng)?;
                let r = draw.base.r_n;
                for (ei, p) in prepared.iter().enumerate() {
                    let err = euclid(&p.apply(&draw, design)?, theta);
                    for (li, loss) in losses.iter().enumerate() {
                        out[ei * losses.len() + li] = loss.eval(err, r);
                    }
                }
                Ok(())
            })?;
        for (k, curve) in curves.iter_mut().enumerate() {
            for (rep, v) in column.iter_mut().enumerate() {
                *v = slots[rep * m + k];
            }
            let (mean, se) = mean_and_se(&column);
            curve.estimates.push(mean);
            curve.std_errors.push(se);
        }
    }
    Ok(curves)
}

fn hodges_1d_parts(theta: f64, n: f64, a_n: f64, c: f64) -> (f64, f64, f64, f64) {
    let s = n.sqrt();
    let lo = s * (c - a_n - theta);
    let hi = s * (c + a_n - theta);
    let collapsed = n * (c - theta) * (c - theta);
    (lo, hi, collapsed, normal::interval_prob(lo, hi))
}

/// `n · E[(θ̆_n(c) − θ)²]` for the classical estimator built on the mean of
/// `n` draws from `N(θ, 1)`.
pub fn closed_form_risk_normal_1d(theta: f64, n: u64, a_n: f64, c: f64) -> f64 {
    let (lo, hi, collapsed, p_dead) = hodges_1d_parts(theta, n as f64, a_n, c);
    collapsed * p_dead + normal::upper_second_moment(hi) + normal::lower_second_moment(lo)
}

/// Standard deviation of the per-replication scaled squared error whose mean
/// is [`closed_form_risk_normal_1d`]; divided by `√reps` it is the exact
/// Monte Carlo standard error of that mean.
pub fn closed_form_loss_sd_normal_1d(theta: f64, n: u64, a_n: f64, c: f64) -> f64 {
    let (lo, hi, collapsed, p_dead) = hodges_1d_parts(theta, n as f64, a_n, c);
    let mean = closed_form_risk_normal_1d(theta, n, a_n, c);
    let second = collapsed * collapsed * p_dead
        + normal::upper_fourth_moment(hi)
        + normal::lower_fourth_moment(lo);
    (second - mean * mean).max(0.0).sqrt()
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub p: f64,
    pub std_error: f64,
}

impl Proportion {
    fn from_count(hits: usize, reps: usize) -> Self {
        let p = hits as f64 / reps as f64;
        Self {
            p,
            std_error: (p * (1.0 - p) / reps as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub n: u64,
    pub reps: usize,
    pub center: Vec<f64>,
    /// Fraction of replications whose output coordinate equals `c_j` exactly.
    pub per_coordinate: Vec<Proportion>,
    /// Fraction of replications whose whole output equals `c`.
    pub joint: Proportion,
}

fn run_replications<T: Send>(
    estimator: &EstimatorSpec,
    template: &DgpTemplate,
    theta: &[f64],
    run: &RunSpec,
    tag: u64,
    f: impl Fn(&Draw, Vec<f64>) -> T + Sync,
) -> Result<(DgpSpec, Vec<T>)> {
    let dgp = template.instantiate(theta, run.n)?;
    let sampler = BaseSampler::new(&dgp, run.n as usize, run.sampling)?;
    let prepared = estimator.prepare(&dgp, run.n, run.sampling)?;
    let design = sampler.design();
    let out = (0..run.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(run.seed, &[tag, rep as u64]);
            let draw = sampler.draw(&mut rng)?;
            let est = prepared.apply(&draw, design)?;
            Ok(f(&draw, est))
        })
        .collect::<Result<Vec<T>>>()?;
    Ok((dgp, out))
}

/// How often each output coordinate sits exactly at the center.
pub fn selection_probability(
    estimator: &EstimatorSpec,
    template: &DgpTemplate,
    theta: &[f64],
    run: &RunSpec,
) -> Result<SelectionReport> {
    if run.reps < 1000 {
        return Err(Error::InvalidSpec(format!(
            "selection probability needs ≥ 1000 replications, got {}",
            run.reps
        )));
    }
    let d = theta.len();
    let c = estimator.center(d);
    check_dim(d, c.len())?;
    let (_, flags) = run_replications(
        estimator,
        template,
        theta,
        run,
        domain::SELECTION,
        |_, est| {
            est.iter()
                .zip(&c)
                .map(|(x, cj)| x == cj)
                .collect::<Vec<bool>>()
        },
    )?;
    let per_coordinate = (0..d)
        .map(|j| Proportion::from_count(flags.iter().filter(|f| f[j]).count(), run.reps))
        .collect();
    let joint = Proportion::from_count(
        flags.iter().filter(|f| f.iter().all(|&x| x)).count(),
        run.reps,
    );
    Ok(SelectionReport {
        n: run.n,
        reps: run.reps,
        center: c,
        per_coordinate,
        joint,
    })
}

/// Sample covariance of `r_n(θ̃ − θ)` on the replications whose selected set
/// is `b(θ)`, next to the limits it should be compared with.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledCovReport {
    pub support: IndexPartition,
    pub reps: usize,
    pub matched: usize,
    /// Mean of the scaled active-block error.
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Entrywise standard errors of `cov`.
    pub cov_std_error: DMatrix<f64>,
    /// `V_bb⁻¹`, the limit when `b(θ)` is known.
    pub oracle_cov: DMatrix<f64>,
    /// `(V_bb − V_bb̄ V_b̄b̄⁻¹ V_b̄b)⁻¹`, the base estimator's marginal covariance.
    pub base_cov: DMatrix<f64>,
    /// Largest `|θ̃_j − c_j|` over inactive coordinates in matched replications.
    pub max_inactive_deviation: f64,
}

pub fn empirical_scaled_cov(
    estimator: &EstimatorSpec,
    template: &DgpTemplate,
    theta: &[f64],
    run: &RunSpec,
) -> Result<ScaledCovReport> {
    if run.reps < 10_000 {
        return Err(Error::InvalidSpec(format!(
            "scaled covariance needs ≥ 10⁴ replications, got {}",
            run.reps
        )));
    }
    let d = theta.len();
    let c = estimator.center(d);
    check_dim(d, c.len())?;
    let support = partition_from_point(theta, &c)?;
    let (dgp, rows) = run_replications(
        estimator,
        template,
        theta,
        run,
        domain::COVARIANCE,
        |draw, est| {
            let selected = est
                .iter()
                .zip(&c)
                .map(|(x, cj)| x != cj)
                .collect::<Vec<_>>();
            (draw.base.r_n, selected, est)
        },
    )?;
    let b = support.active();
    let matched: Vec<(f64, &Vec<f64>)> = rows
        .iter()
        .filter(|(_, sel, _)| IndexPartition::from_flags(sel) == support)
        .map(|(r, _, est)| (*r, est))
        .collect();
    if matched.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "only {} of {} replications selected b(θ)",
            matched.len(),
            run.reps
        )));
    }
    let k = b.len();
    let m = matched.len() as f64;
    let scaled: Vec<Vec<f64>> = matched
        .iter()
        .map(|(r, est)| b.iter().map(|&j| r * (est[j] - theta[j])).collect())
        .collect();
    let mean: Vec<f64> = (0..k)
        .map(|i| compensated_sum(scaled.iter().map(|s| s[i])) / m)
        .collect();
    let mut cov = DMatrix::zeros(k, k);
    let mut cov_se = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let prods: Vec<f64> = scaled
                .iter()
                .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
                .collect();
            let (pm, pse) = mean_and_se(&prods);
            cov[(i, j)] = pm * m / (m - 1.0);
            cov_se[(i, j)] = pse;
        }
    }
    let max_inactive_deviation = matched
        .iter()
        .flat_map(|(_, est)| {
            support
                .inactive()
                .iter()
                .map(|&j| (est[j] - c[j]).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    let v = dgp.precision()?;
    let (oracle_cov, base_cov) = if k == 0 {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    } else {
        (
            oracle_block_cov(&v, &support)?,
            schur_asymptotic_cov(&v, &support)?,
        )
    };
    Ok(ScaledCovReport {
        support,
        reps: run.reps,
        matched: matched.len(),
        mean,
        cov,
        cov_std_error: cov_se,
        oracle_cov,
        base_cov,
        max_inactive_deviation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: f64,
    /// Empirical `E[|Y| 1{|Y| > M}]`.
    pub value: f64,
    pub std_error: f64,
}

/// Empirical tail expectations, a uniform-integrability probe. Plain
/// in-order sums keep the values non-increasing in `M`.
pub fn tail_mass_diagnostic(samples: &[f64], m_grid: &[f64]) -> Result<Vec<TailRow>> {
    if samples.is_empty() {
        return Err(Error::InvalidSpec(
            "tail diagnostic needs at least one sample".into(),
        ));
    }
    let count = samples.len() as f64;
    Ok(m_grid
        .iter()
        .map(|&m| {
            let term = |y: f64| if y.abs() > m { y.abs() } else { 0.0 };
            let value = samples.iter().map(|&y| term(y)).sum::<f64>() / count;
            let ss = samples
                .iter()
                .map(|&y| (term(y) - value) * (term(y) - value))
                .sum::<f64>();
            let std_error = if samples.len() > 1 {
                (ss / (count - 1.0)).sqrt() / count.sqrt()
            } else {
                0.0
            };
            TailRow {
                m,
                value,
                std_error,
            }
        })
        .collect())
}

/// Settings of the n-scaled MSE sweep of the one-dimensional classical estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Config {
    pub n_values: Vec<u64>,
    pub grid: GridSpec,
    pub reps: usize,
    pub center: f64,
    pub threshold: PowerLaw,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            n_values: vec![5, 50, 500],
            grid: GridSpec::line(-1.5, 1.5, 0.01),
            reps: 100_000,
            center: 0.0,
            threshold: PowerLaw::new(1.0, 0.25),
        }
    }
}

pub const CLOSED_FORM_ID: &str = "closed_form_classical_hodges";

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Result {
    pub monte_carlo: Vec<RiskCurve>,
    pub closed_form: Vec<RiskCurve>,
}

impl Fig1Result {
    /// Writes `fig1_n{n}.csv` per sample size and `fig1_combined.csv` with
    /// every Monte Carlo and closed-form curve.
    pub fn write_csv(&self, dir: &Path, preamble: &[String]) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for curve in &self.monte_carlo {
            let path = dir.join(format!("fig1_n{}.csv", curve.n));
            write_curves_file(std::slice::from_ref(curve), &path, preamble)?;
            paths.push(path);
        }
        let path = dir.join("fig1_combined.csv");
        let all: Vec<RiskCurve> = self
            .monte_carlo
            .iter()
            .chain(&self.closed_form)
            .cloned()
            .collect();
        write_curves_file(&all, &path, preamble)?;
        paths.push(path);
        Ok(paths)
    }
}

/// Monte Carlo and closed-form n-scaled MSE curves of the classical estimator
/// under `N(θ, 1)` sampling.
pub fn fig1_sweep(cfg: &Fig1Config, seed: u64) -> Result<Fig1Result> {
    if cfg.n_values.is_empty() || cfg.n_values.contains(&0) {
        return Err(Error::InvalidSpec("sample sizes must be positive".into()));
    }
    let grid = cfg.grid.points(1)?;
    let estimator = EstimatorSpec::ClassicalHodges {
        center: vec![cfg.center],
        threshold: cfg.threshold,
    };
    let template = DgpTemplate::standard_normal(1);
    let mut monte_carlo = Vec::new();
    let mut closed_form = Vec::new();
    for &n in &cfg.n_values {
        let run = RunSpec::new(n, cfg.reps, seed);
        monte_carlo.push(mc_risk(
            &estimator,
            &template,
            &grid,
            &LossSpec::ScaledMse,
            &run,
        )?);
        let a_n = cfg.threshold.at(n);
        closed_form.push(RiskCurve {
            estimator_id: CLOSED_FORM_ID.into(),
            loss_id: LossSpec::ScaledMse.id(),
            n,
            theta_grid: grid.clone(),
            estimates: grid
                .iter()
                .map(|t| closed_form_risk_normal_1d(t[0], n, a_n, cfg.center))
                .collect(),
            std_errors: vec![0.0; grid.len()],
            reps: 0,
            seed,
        });
    }
    Ok(Fig1Result {
        monte_carlo,
        closed_form,
    })
}
