//! Run configuration: per-command defaults, overlaid by a TOML file, then by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use hodges_core::models::{DesignSpec, Sampling};
use hodges_core::risk::{DgpTemplate, EstimatorSpec, GridSpec, LossSpec};
use hodges_core::schedule::ThresholdSchedule;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fig1,
    RiskSweep,
    VerifyBounds,
    OracleCheck,
    BaselineCompare,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fig1 => "fig1",
            Command::RiskSweep => "risk-sweep",
            Command::VerifyBounds => "verify-bounds",
            Command::OracleCheck => "oracle-check",
            Command::BaselineCompare => "baseline-compare",
            Command::Simulate => "simulate",
        }
    }

    /// Config keys the command reads besides `command`, `seed` and `out`.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Fig1 => &["reps", "n_values", "center", "schedule", "grid"],
            Command::RiskSweep => &[
                "reps",
                "n_values",
                "sampling",
                "dgp",
                "estimators",
                "losses",
                "grid",
            ],
            Command::VerifyBounds => &["center", "schedule", "bounds"],
            Command::OracleCheck => &[
                "reps", "n_values", "sampling", "dgp", "theta", "center", "schedule", "oracle",
            ],
            Command::BaselineCompare => &[
                "reps",
                "n_values",
                "sampling",
                "dgp",
                "estimators",
                "losses",
                "grid",
                "center",
                "schedule",
            ],
            Command::Simulate => &["n", "dgp", "theta"],
        }
    }
}

/// A problem with the configuration; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpConfig {
    /// `cov` is the covariance of one observation.
    NormalMean {
        cov: Vec<Vec<f64>>,
    },
    LinearModel {
        sigma2: f64,
        design: DesignSpec,
    },
    UniformBox,
}

impl DgpConfig {
    pub fn template(&self) -> Result<DgpTemplate, ConfigError> {
        Ok(match self {
            DgpConfig::NormalMean { cov } => DgpTemplate::NormalMean {
                cov: matrix(cov, "dgp.cov")?,
            },
            DgpConfig::LinearModel { sigma2, design } => DgpTemplate::LinearModel {
                sigma2: *sigma2,
                design: design.clone(),
            },
            DgpConfig::UniformBox => DgpTemplate::UniformBox,
        })
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, DgpConfig::LinearModel { .. })
    }

    fn dim(&self) -> Option<usize> {
        match self {
            DgpConfig::NormalMean { cov } => Some(cov.len()),
            _ => None,
        }
    }
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(bad(format!("{what} must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Classical,
    Oracle,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub theorem: Theorem,
    pub n: u64,
    pub k: f64,
    pub points: usize,
    pub realizations_per_point: usize,
    /// Precision `V` used by the oracle estimator.
    pub precision: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Required probability of the correct selection at the largest n.
    pub min_selection: f64,
    /// Tolerance, in standard errors, for selection probabilities.
    pub selection_z: f64,
    /// Tolerance, in standard errors, for the scaled covariance.
    pub cov_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ThresholdSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<LossSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

fn req<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
    field
        .as_ref()
        .ok_or_else(|| bad(format!("missing `{name}`")))
}

impl RunConfig {
    pub fn defaults(cmd: Command) -> Self {
        let mut cfg = RunConfig {
            command: cmd.name().into(),
            seed: DEFAULT_SEED,
            out: PathBuf::from("out"),
            reps: None,
            n: None,
            n_values: None,
            sampling: None,
            theta: None,
            center: None,
            schedule: None,
            grid: None,
            dgp: None,
            estimators: None,
            losses: None,
            bounds: None,
            oracle: None,
        };
        let identity = |d: usize| {
            (0..d)
                .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
                .collect()
        };
        match cmd {
            Command::Fig1 => {
                cfg.reps = Some(100_000);
                cfg.n_values = Some(vec![5, 50, 500]);
                cfg.center = Some(vec![0.0]);
                cfg.schedule = Some(ThresholdSchedule::hodges_default(1));
                cfg.grid = Some(GridSpec::line(-1.5, 1.5, 0.01));
            }
            Command::RiskSweep => {
                cfg.reps = Some(10_000);
                cfg.n_values = Some(vec![100]);
                cfg.sampling = Some(Sampling::Exact);
                cfg.dgp = Some(DgpConfig::NormalMean { cov: identity(2) });
                cfg.estimators = Some(vec![
                    EstimatorSpec::Base,
                    EstimatorSpec::classical_default(vec![0.0, 0.0]),
                    EstimatorSpec::oracle_default(vec![0.0, 0.0]),
                ]);
                cfg.losses = Some(vec![LossSpec::ScaledMse]);
                cfg.grid = Some(GridSpec {
                    start: -1.0,
                    stop: 1.0,
                    step: 0.02,
                    axis: 0,
                    base: vec![0.0, 0.0],
                });
            }
            Command::VerifyBounds => {
                cfg.center = Some(vec![0.0, 0.0]);
                cfg.schedule = Some(ThresholdSchedule::hodges_default(2));
                cfg.bounds = Some(BoundsConfig {
                    theorem: Theorem::Both,
                    n: 500,
                    k: 1.0,
                    points: 100,
                    realizations_per_point: 1_000_000,
                    precision: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
                });
            }
            Command::OracleCheck => {
                cfg.reps = Some(10_000);
                cfg.n_values = Some(vec![100, 400, 1600, 6400]);
                cfg.sampling = Some(Sampling::Exact);
                // Inverse of the precision [[2, 1], [1, 2]].
                cfg.dgp = Some(DgpConfig::NormalMean {
                    cov: vec![vec![2.0 / 3.0, -1.0 / 3.0], vec![-1.0 / 3.0, 2.0 / 3.0]],
                });
                cfg.theta = Some(vec![2.0, 0.0]);
                cfg.center = Some(vec![0.0, 0.0]);
                cfg.schedule = Some(ThresholdSchedule::hodges_default(2));
                cfg.oracle = Some(OracleConfig {
                    min_selection: 0.95,
                    selection_z: 3.0,
                    cov_z: 5.0,
                });
            }
            Command::BaselineCompare => {
                cfg.reps = Some(2_000);
                cfg.n_values = Some(vec![400]);
                cfg.sampling = Some(Sampling::Exact);
                cfg.dgp = Some(DgpConfig::LinearModel {
                    sigma2: 1.0,
                    design: DesignSpec::Orthonormal { seed: 7 },
                });
                cfg.losses = Some(vec![LossSpec::ScaledMse]);
                cfg.grid = Some(GridSpec {
                    start: -1.0,
                    stop: 1.0,
                    step: 0.05,
                    axis: 2,
                    base: vec![3.0, 1.5, 0.0, 0.0],
                });
                cfg.center = Some(vec![0.0; 4]);
                cfg.schedule = Some(ThresholdSchedule::hodges_default(4));
            }
            Command::Simulate => {
                cfg.n = Some(100);
                cfg.dgp = Some(DgpConfig::NormalMean { cov: identity(2) });
                cfg.theta = Some(vec![2.0, 0.0]);
            }
        }
        cfg
    }

    /// Defaults for `cmd`, overlaid by the TOML text `file`, then by the flags.
    pub fn resolve(
        cmd: Command,
        file: Option<&str>,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self, ConfigError> {
        let mut table = match Value::try_from(Self::defaults(cmd)) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("defaults serialize to a table"),
        };
        if let Some(text) = file {
            let overlay: Table = text
                .parse()
                .map_err(|e| bad(format!("cannot parse config: {e}")))?;
            if let Some(name) = overlay.get("command") {
                if name.as_str() != Some(cmd.name()) {
                    return Err(bad(format!(
                        "config is for command {name}, not {}",
                        cmd.name()
                    )));
                }
            }
            for key in overlay.keys() {
                if !["command", "seed", "out"].contains(&key.as_str())
                    && !cmd.keys().contains(&key.as_str())
                {
                    return Err(bad(format!("`{key}` is not used by {}", cmd.name())));
                }
            }
            merge(&mut table, overlay);
        }
        if let Some(seed) = seed {
            table.insert("seed".into(), Value::Integer(seed as i64));
        }
        if let Some(out) = out {
            table.insert("out".into(), Value::String(out.display().to_string()));
        }
        // Round-trip through text so type errors quote the offending line.
        let text = toml::to_string(&table).expect("merged table serializes");
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| bad(format!("invalid config: {e}")))?;
        cfg.validate(cmd)?;
        Ok(cfg)
    }

    fn validate(&self, cmd: Command) -> Result<(), ConfigError> {
        let positive_n = |v: &[u64]| {
            if v.is_empty() || v.contains(&0) {
                Err(bad(
                    "n_values must be a nonempty list of positive sample sizes",
                ))
            } else {
                Ok(())
            }
        };
        if let Some(v) = &self.n_values {
            positive_n(v)?;
        }
        if let Some(grid) = &self.grid {
            if !(grid.step > 0.0) {
                return Err(bad(format!(
                    "grid step must be positive, got {}",
                    grid.step
                )));
            }
            if !(grid.stop >= grid.start) {
                return Err(bad("grid stop must not be below start"));
            }
        }
        if let Some(losses) = &self.losses {
            if losses.is_empty() {
                return Err(bad("losses must not be empty"));
            }
            for l in losses {
                l.validate().map_err(|e| bad(e.to_string()))?;
            }
        }
        if let Some(est) = &self.estimators {
            if est.is_empty() {
                return Err(bad("estimators must not be empty"));
            }
        }
        if let Some(dgp) = &self.dgp {
            dgp.template()?;
        }
        if let (Some(d), Some(center)) = (self.dgp.as_ref().and_then(DgpConfig::dim), &self.center)
        {
            if d != center.len() {
                return Err(bad(format!(
                    "center has {} coordinates, dgp has {d}",
                    center.len()
                )));
            }
        }
        if let (Some(s), Some(center)) = (&self.schedule, &self.center) {
            if s.thresholds.len() != center.len() {
                return Err(bad(format!(
                    "schedule has {} thresholds, center has {} coordinates",
                    s.thresholds.len(),
                    center.len()
                )));
            }
        }
        match cmd {
            Command::Fig1 => {
                if req(&self.center, "center")?.len() != 1 {
                    return Err(bad("fig1 is one-dimensional: center needs one coordinate"));
                }
            }
            Command::VerifyBounds => {
                let b = req(&self.bounds, "bounds")?;
                if !(b.k > 0.0 && b.k.is_finite())
                    || b.n == 0
                    || b.points == 0
                    || b.realizations_per_point == 0
                {
                    return Err(bad(
                        "bounds needs k > 0, n > 0, points > 0 and realizations_per_point > 0",
                    ));
                }
                let d = req(&self.center, "center")?.len();
                if matrix(&b.precision, "bounds.precision")?.nrows() != d {
                    return Err(bad(format!("bounds.precision must be {d}x{d}")));
                }
            }
            Command::OracleCheck => {
                let o = req(&self.oracle, "oracle")?;
                if !(0.0..=1.0).contains(&o.min_selection)
                    || !(o.selection_z > 0.0)
                    || !(o.cov_z > 0.0)
                {
                    return Err(bad(
                        "oracle needs min_selection in [0, 1] and positive z tolerances",
                    ));
                }
                if req(&self.theta, "theta")?.len() != req(&self.center, "center")?.len() {
                    return Err(bad("theta and center differ in dimension"));
                }
            }
            Command::Simulate => {
                if *req(&self.n, "n")? == 0 {
                    return Err(bad("n must be positive"));
                }
            }
            Command::RiskSweep | Command::BaselineCompare => {}
        }
        Ok(())
    }

    pub fn reps(&self) -> Result<usize, ConfigError> {
        req(&self.reps, "reps").copied()
    }
    pub fn n_values(&self) -> Result<&[u64], ConfigError> {
        req(&self.n_values, "n_values").map(Vec::as_slice)
    }
    pub fn sampling(&self) -> Sampling {
        self.sampling.unwrap_or_default()
    }
    pub fn theta(&self) -> Result<&[f64], ConfigError> {
        req(&self.theta, "theta").map(Vec::as_slice)
    }
    pub fn center(&self) -> Result<&[f64], ConfigError> {
        req(&self.center, "center").map(Vec::as_slice)
    }
    pub fn schedule(&self) -> Result<&ThresholdSchedule, ConfigError> {
        req(&self.schedule, "schedule")
    }
    pub fn grid(&self) -> Result<&GridSpec, ConfigError> {
        req(&self.grid, "grid")
    }
    pub fn dgp(&self) -> Result<&DgpConfig, ConfigError> {
        req(&self.dgp, "dgp")
    }
    pub fn losses(&self) -> Result<&[LossSpec], ConfigError> {
        req(&self.losses, "losses").map(Vec::as_slice)
    }
    pub fn bounds(&self) -> Result<&BoundsConfig, ConfigError> {
        req(&self.bounds, "bounds")
    }
    pub fn oracle(&self) -> Result<&OracleConfig, ConfigError> {
        req(&self.oracle, "oracle")
    }

    /// The resolved configuration as TOML, for CSV preambles.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Overlays `top` onto `base`. Tables merge key by key unless the overlay
/// names a variant (`model`, `kind`, `family`), in which case it replaces the
/// default wholesale; arrays and scalars always replace.
fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t))
                if !["model", "kind", "family"]
                    .iter()
                    .any(|k| t.contains_key(*k)) =>
            {
                merge(b, t)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
