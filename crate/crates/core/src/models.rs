//! Data-generating processes and their base estimators.
//!
//! Three models are supported: a multivariate normal mean (MLE = sample mean,
//! rate √n), a fixed-design linear regression (least squares, rate √n), and
//! independent uniforms on a box `∏[−θ_k, θ_k]` (MLE = coordinate-wise max of
//! absolute values, rate n).

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimators::BaseEstimate;
use crate::linalg;
use crate::partition::CovSpec;
use crate::rng::{domain, substream};

#[derive(Debug, Clone, PartialEq)]
pub enum DgpSpec {
    /// Rows i.i.d. `N(θ, Σ)`.
    NormalMean { theta: Vec<f64>, cov: DMatrix<f64> },
    /// `Y = Xβ + ε`, `ε ~ N(0, σ² I_n)`, with a fixed `n × p` design.
    LinearModel {
        beta: Vec<f64>,
        sigma2: f64,
        design: DMatrix<f64>,
    },
    /// Rows with independent coordinates uniform on `[−θ_k, θ_k]`.
    UniformBox { theta: Vec<f64> },
}

impl DgpSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            DgpSpec::NormalMean { .. } => "normal_mean",
            DgpSpec::LinearModel { .. } => "linear_model",
            DgpSpec::UniformBox { .. } => "uniform_box",
        }
    }

    /// Dimension of the parameter.
    pub fn dim(&self) -> usize {
        match self {
            DgpSpec::NormalMean { theta, .. } | DgpSpec::UniformBox { theta } => theta.len(),
            DgpSpec::LinearModel { beta, .. } => beta.len(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            DgpSpec::NormalMean { theta, .. } | DgpSpec::UniformBox { theta } => theta,
            DgpSpec::LinearModel { beta, .. } => beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidSpec(
                "parameter dimension must be at least 1".into(),
            ));
        }
        if self.theta().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(
                "parameter has non-finite entries".into(),
            ));
        }
        match self {
            DgpSpec::NormalMean { theta, cov } => {
                check_dim(theta.len(), cov.nrows())?;
                CovSpec::new(cov.clone())
                    .map_err(|e| Error::InvalidSpec(format!("covariance: {e}")))?;
            }
            DgpSpec::LinearModel {
                beta,
                sigma2,
                design,
            } => {
                if !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "σ² must be positive, got {sigma2}"
                    )));
                }
                check_dim(beta.len(), design.ncols())?;
                if design.nrows() < design.ncols() {
                    return Err(Error::NumericalRank(
                        "design has fewer rows than columns".into(),
                    ));
                }
                linalg::spd_cholesky(&(design.transpose() * design), "X'X")?;
            }
            DgpSpec::UniformBox { theta } => {
                if theta.iter().any(|&t| !(t > 0.0)) {
                    return Err(Error::InvalidSpec(
                        "uniform box half-widths must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Precision `V` of the limit law of `r_n(θ̂ − θ)` at sample size `n`.
    /// For the linear model it is `(n⁻¹X'X)/σ²` on the fixed design; for the
    /// uniform box it is `diag(θ_k⁻²)`.
    pub fn precision(&self) -> Result<CovSpec> {
        match self {
            DgpSpec::NormalMean { cov, .. } => CovSpec::from_covariance(cov),
            DgpSpec::LinearModel { sigma2, design, .. } => {
                let n = design.nrows() as f64;
                CovSpec::new(linalg::symmetrize(
                    &(design.transpose() * design / (n * sigma2)),
                ))
            }
            DgpSpec::UniformBox { theta } => {
                CovSpec::from_diagonal(&theta.iter().map(|t| 1.0 / (t * t)).collect::<Vec<_>>())
            }
        }
    }
}

/// Simulated observations: one row per observation. Linear-model datasets
/// carry the design columns followed by the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub dgp: DgpSpec,
    pub n: usize,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>, dgp: DgpSpec) -> Result<Self> {
        let n = observations.nrows();
        if n == 0 {
            return Err(Error::InvalidSpec("dataset has no rows".into()));
        }
        let cols = match &dgp {
            DgpSpec::LinearModel { beta, .. } => beta.len() + 1,
            other => other.dim(),
        };
        check_dim(cols, observations.ncols())?;
        Ok(Self {
            observations,
            dgp,
            n,
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        match &self.dgp {
            DgpSpec::LinearModel { beta, .. } => (1..=beta.len())
                .map(|j| format!("x{j}"))
                .chain(std::iter::once("y".to_string()))
                .collect(),
            other => (1..=other.dim()).map(|j| format!("y{j}")).collect(),
        }
    }

    /// Design and response of a linear-model dataset.
    pub fn design_and_response(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        match &self.dgp {
            DgpSpec::LinearModel { beta, .. } => {
                let p = beta.len();
                let x = self.observations.columns(0, p).into_owned();
                let y = self.observations.column(p).into_owned();
                Ok((x, y))
            }
            other => Err(Error::InvalidSpec(format!(
                "expected linear_model data, got {}",
                other.tag()
            ))),
        }
    }

    /// Writes a header row of column names and one observation per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.column_names())?;
        for row in self.observations.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads observations written by [`Dataset::write_csv`]; `dgp` supplies the
    /// model the rows belong to. Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R, dgp: DgpSpec) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let header = r.headers()?.clone();
        let mut values = Vec::new();
        let mut rows = 0;
        for record in r.records() {
            let record = record?;
            check_dim(header.len(), record.len())?;
            for field in record.iter() {
                values.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidSpec(format!("row {}: cannot parse {field:?}: {e}", rows + 1))
                })?);
            }
            rows += 1;
        }
        let obs = DMatrix::from_row_slice(rows, header.len(), &values);
        let data = Self::new(obs, dgp)?;
        if header
            .iter()
            .ne(data.column_names().iter().map(String::as_str))
        {
            return Err(Error::InvalidSpec(format!(
                "header {:?} does not match expected {:?}",
                header.iter().collect::<Vec<_>>(),
                data.column_names()
            )));
        }
        Ok(data)
    }
}

fn fill_normal(rng: &mut ChaCha8Rng, buf: &mut [f64]) {
    for z in buf.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// Uniform on `(0, 1]`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Draws `n` observations from `dgp`; the stream is keyed by `(seed, n)`.
pub fn simulate(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, &[domain::SIMULATE, n as u64]);
    simulate_with(dgp, n, &mut rng)
}

pub fn simulate_with(dgp: &DgpSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidSpec("sample size must be at least 1".into()));
    }
    dgp.validate()?;
    let obs = match dgp {
        DgpSpec::NormalMean { theta, cov } => {
            let d = theta.len();
            let l = linalg::spd_cholesky(cov, "Σ")?.l();
            let mut z = vec![0.0; d];
            let mut obs = DMatrix::zeros(n, d);
            for i in 0..n {
                fill_normal(rng, &mut z);
                for r in 0..d {
                    let mut acc = theta[r];
                    for s in 0..=r {
                        acc += l[(r, s)] * z[s];
                    }
                    obs[(i, r)] = acc;
                }
            }
            obs
        }
        DgpSpec::LinearModel {
            beta,
            sigma2,
            design,
        } => {
            if design.nrows() != n {
                return Err(Error::InvalidSpec(format!(
                    "design has {} rows but n = {n}",
                    design.nrows()
                )));
            }
            let p = beta.len();
            let sigma = sigma2.sqrt();
            let mean = design * DVector::from_column_slice(beta);
            let mut obs = DMatrix::zeros(n, p + 1);
            obs.columns_mut(0, p).copy_from(design);
            for i in 0..n {
                let eps: f64 = rng.sample(StandardNormal);
                obs[(i, p)] = mean[i] + sigma * eps;
            }
            obs
        }
        DgpSpec::UniformBox { theta } => {
            let d = theta.len();
            DMatrix::from_fn(n, d, |_, k| theta[k] * (2.0 * rng.random::<f64>() - 1.0))
        }
    };
    Dataset::new(obs, dgp.clone())
}

/// Sample mean with `r_n = √n` and `V̂ = Σ⁻¹` for the known `Σ`.
pub fn mle_normal_mean(data: &Dataset, sigma: &DMatrix<f64>) -> Result<BaseEstimate> {
    if !matches!(data.dgp, DgpSpec::NormalMean { .. }) {
        return Err(Error::InvalidSpec(format!(
            "expected normal_mean data, got {}",
            data.dgp.tag()
        )));
    }
    let d = data.observations.ncols();
    check_dim(d, sigma.nrows())?;
    let n = data.n as f64;
    let theta_hat: Vec<f64> = data
        .observations
        .column_iter()
        .map(|c| c.sum() / n)
        .collect();
    BaseEstimate::new(
        theta_hat,
        n.sqrt(),
        CovSpec::from_covariance(sigma)?,
        data.n as u64,
    )
}

/// Least-squares machinery for a fixed design.
#[derive(Debug, Clone)]
pub struct LinearFit {
    design: DMatrix<f64>,
    xtx: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl LinearFit {
    pub fn new(design: &DMatrix<f64>) -> Result<Self> {
        if design.nrows() < design.ncols() || design.ncols() == 0 {
            return Err(Error::NumericalRank(format!(
                "design {}x{} cannot have full column rank",
                design.nrows(),
                design.ncols()
            )));
        }
        let xtx = linalg::symmetrize(&(design.transpose() * design));
        let chol = linalg::spd_cholesky(&xtx, "X'X")?;
        Ok(Self {
            design: design.clone(),
            xtx,
            chol,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// `(X'X)⁻¹X'y` and the residual sum of squares.
    pub fn solve(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let beta = self.chol.solve(&(self.design.transpose() * y));
        let resid = y - &self.design * &beta;
        (beta, resid.norm_squared())
    }

    /// Base estimate with `V̂ = (n⁻¹X'X)/σ̂²`. `σ̂²` is the residual mean
    /// square (divisor `n − p`); when that is not estimable or is zero the
    /// model's `σ²` is used instead.
    pub fn estimate(&self, y: &DVector<f64>, model_sigma2: f64) -> Result<BaseEstimate> {
        let (n, p) = self.design.shape();
        let (beta, rss) = self.solve(y);
        let sigma2_hat = if n > p && rss > 0.0 {
            rss / (n - p) as f64
        } else {
            model_sigma2
        };
        let v_hat = CovSpec::new(linalg::symmetrize(&(&self.xtx / (n as f64 * sigma2_hat))))?;
        BaseEstimate::new(
            beta.iter().copied().collect(),
            (n as f64).sqrt(),
            v_hat,
            n as u64,
        )
    }
}

/// Least squares on a linear-model dataset (rate √n).
pub fn lse_linear(data: &Dataset) -> Result<BaseEstimate> {
    let (x, y) = data.design_and_response()?;
    let sigma2 = match &data.dgp {
        DgpSpec::LinearModel { sigma2, .. } => *sigma2,
        _ => unreachable!("checked by design_and_response"),
    };
    LinearFit::new(&x)?.estimate(&y, sigma2)
}

/// Coordinate-wise `max_i |Y_ik|` with `r_n = n` and `V̂ = diag(θ̂_k⁻²)`.
pub fn mle_uniform_box(data: &Dataset) -> Result<BaseEstimate> {
    if !matches!(data.dgp, DgpSpec::UniformBox { .. }) {
        return Err(Error::InvalidSpec(format!(
            "expected uniform_box data, got {}",
            data.dgp.tag()
        )));
    }
    let theta_hat: Vec<f64> = data.observations.column_iter().map(|c| c.amax()).collect();
    uniform_box_estimate(theta_hat, data.n as u64)
}

fn uniform_box_estimate(theta_hat: Vec<f64>, n: u64) -> Result<BaseEstimate> {
    let prec: Vec<f64> = theta_hat.iter().map(|t| 1.0 / (t * t)).collect();
    BaseEstimate::new(theta_hat, n as f64, CovSpec::from_diagonal(&prec)?, n)
}

/// Fixed designs for linear-model studies, materialized per sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Columns orthogonal with `X'X = n I`.
    Orthonormal { seed: u64 },
    /// I.i.d. standard normal entries.
    Gaussian { seed: u64 },
}

impl DesignSpec {
    pub fn materialize(&self, n: usize, p: usize) -> Result<DMatrix<f64>> {
        if n < p || p == 0 {
            return Err(Error::InvalidSpec(format!(
                "cannot build a full-rank {n}x{p} design"
            )));
        }
        let seed = match self {
            DesignSpec::Orthonormal { seed } | DesignSpec::Gaussian { seed } => *seed,
        };
        let mut rng = substream(seed, &[domain::DESIGN, n as u64, p as u64]);
        let raw = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        match self {
            DesignSpec::Gaussian { .. } => Ok(raw),
            DesignSpec::Orthonormal { .. } => Ok(raw.qr().q() * (n as f64).sqrt()),
        }
    }
}

/// How the Monte Carlo harness produces the base estimate for a replication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Draw the base estimate from its exact finite-sample law where one is
    /// available (`N(θ, Σ/n)` for the normal mean, `θ_k U^(1/n)` for the
    /// uniform-box maximum); the linear model always simulates full data.
    #[default]
    Exact,
    /// Simulate all `n` observations and apply the estimator.
    FullData,
}

/// One replication's base estimate, plus the response when the estimator
/// family needs the raw regression data.
#[derive(Debug, Clone)]
pub struct Draw {
    pub base: BaseEstimate,
    pub response: Option<DVector<f64>>,
}

/// Precomputed per-`(dgp, n)` state for drawing base estimates repeatedly.
#[derive(Debug, Clone)]
pub struct BaseSampler {
    dgp: DgpSpec,
    n: usize,
    sampling: Sampling,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Normal {
        cov: DMatrix<f64>,
        scaled_chol: DMatrix<f64>,
        precision: CovSpec,
    },
    Linear {
        fit: LinearFit,
        mean: DVector<f64>,
        sigma2: f64,
    },
    Uniform,
}

impl BaseSampler {
    pub fn new(dgp: &DgpSpec, n: usize, sampling: Sampling) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("sample size must be at least 1".into()));
        }
        dgp.validate()?;
        let kind = match dgp {
            DgpSpec::NormalMean { cov, .. } => SamplerKind::Normal {
                cov: cov.clone(),
                scaled_chol: linalg::spd_cholesky(cov, "Σ")?.l() / (n as f64).sqrt(),
                precision: CovSpec::from_covariance(cov)?,
            },
            DgpSpec::LinearModel {
                beta,
                sigma2,
                design,
            } => {
                if design.nrows() != n {
                    return Err(Error::InvalidSpec(format!(
                        "design has {} rows but n = {n}",
                        design.nrows()
                    )));
                }
                SamplerKind::Linear {
                    fit: LinearFit::new(design)?,
                    mean: design * DVector::from_column_slice(beta),
                    sigma2: *sigma2,
                }
            }
            DgpSpec::UniformBox { .. } => SamplerKind::Uniform,
        };
        Ok(Self {
            dgp: dgp.clone(),
            n,
            sampling,
            kind,
        })
    }

    pub fn dgp(&self) -> &DgpSpec {
        &self.dgp
    }

    pub fn design(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            SamplerKind::Linear { fit, .. } => Some(fit.design()),
            _ => None,
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw> {
        let n = self.n;
        match (&self.kind, self.sampling) {
            (
                SamplerKind::Normal {
                    scaled_chol,
                    precision,
                    ..
                },
                Sampling::Exact,
            ) => {
                let theta = self.dgp.theta();
                let d = theta.len();
                let mut z = vec![0.0; d];
                fill_normal(rng, &mut z);
                let theta_hat: Vec<f64> = (0..d)
                    .map(|r| {
                        let mut acc = theta[r];
                        for s in 0..=r {
                            acc += scaled_chol[(r, s)] * z[s];
                        }
                        acc
                    })
                    .collect();
                let base =
                    BaseEstimate::new(theta_hat, (n as f64).sqrt(), precision.clone(), n as u64)?;
                Ok(Draw {
                    base,
                    response: None,
                })
            }
            (SamplerKind::Normal { cov, .. }, Sampling::FullData) => {
                let data = simulate_with(&self.dgp, n, rng)?;
                Ok(Draw {
                    base: mle_normal_mean(&data, cov)?,
                    response: None,
                })
            }
            (SamplerKind::Linear { fit, mean, sigma2 }, _) => {
                let sigma = sigma2.sqrt();
                let y = DVector::from_fn(n, |i, _| {
                    let eps: f64 = rng.sample(StandardNormal);
                    mean[i] + sigma * eps
                });
                let base = fit.estimate(&y, *sigma2)?;
                Ok(Draw {
                    base,
                    response: Some(y),
                })
            }
            (SamplerKind::Uniform, Sampling::Exact) => {
                let inv_n = 1.0 / n as f64;
                let theta_hat: Vec<f64> = self
                    .dgp
                    .theta()
                    .iter()
                    .map(|t| t * open_unit(rng).powf(inv_n))
                    .collect();
                Ok(Draw {
                    base: uniform_box_estimate(theta_hat, n as u64)?,
                    response: None,
                })
            }
            (SamplerKind::Uniform, Sampling::FullData) => {
                let data = simulate_with(&self.dgp, n, rng)?;
                Ok(Draw {
                    base: mle_uniform_box(&data)?,
                    response: None,
                })
            }
        }
    }
}
