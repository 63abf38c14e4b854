use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hodges_core::baselines::PenaltySpec;
use hodges_core::bounds::{
    classical_bound_sweep, oracle_bound_sweep, ring_region, BoundReport, SweepSpec,
};
use hodges_core::models::{lse_linear, mle_normal_mean, mle_uniform_box, simulate, DgpSpec};
use hodges_core::normal::interval_prob;
use hodges_core::partition::{CovSpec, RegionSpec};
use hodges_core::risk::{
    empirical_scaled_cov, fig1_sweep, mc_risk_many, selection_probability, write_curves_file,
    EstimatorSpec, Fig1Config, RiskCurve, RunSpec, ScaledCovReport, SelectionReport,
};
use hodges_core::Error;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{matrix, Command, ConfigError, DgpConfig, RunConfig, Theorem};

/// Why a command did not succeed; maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and failed, or could not be completed (exit 1).
    Check(String),
    /// Bad configuration or unusable output location (exit 2).
    Config(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(_) | Error::InsufficientData(_) => Failure::Check(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("cannot write output: {e}"))
    }
}

pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Outcome, Failure> {
    fs::create_dir_all(&cfg.out)?;
    match cmd {
        Command::Fig1 => fig1(cfg),
        Command::RiskSweep => risk_sweep(cfg),
        Command::VerifyBounds => verify_bounds(cfg),
        Command::OracleCheck => oracle_check(cfg),
        Command::BaselineCompare => baseline_compare(cfg),
        Command::Simulate => simulate_data(cfg),
    }
}

fn preamble(cfg: &RunConfig) -> Vec<String> {
    vec![format!("hodges {}", cfg.command), cfg.to_toml()]
}

fn write_preamble(w: &mut impl Write, cfg: &RunConfig) -> std::io::Result<()> {
    for line in preamble(cfg).iter().flat_map(|l| l.lines()) {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

fn write_json(path: &Path, cfg: &RunConfig, mut body: Value) -> Result<(), Failure> {
    body.as_object_mut()
        .expect("JSON body is an object")
        .insert("config".into(), to_value(cfg));
    let mut text = serde_json::to_string_pretty(&body).expect("JSON serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("value serializes to JSON")
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fig1(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let f1 = Fig1Config {
        n_values: cfg.n_values()?.to_vec(),
        grid: cfg.grid()?.clone(),
        reps: cfg.reps()?,
        center: cfg.center()?[0],
        threshold: cfg.schedule()?.thresholds[0],
    };
    let res = fig1_sweep(&f1, cfg.seed)?;
    let files = res.write_csv(&cfg.out, &preamble(cfg))?;
    let summary = res
        .monte_carlo
        .iter()
        .map(|c| {
            let (i, peak) = c.max_estimate();
            format!(
                "n = {}: peak scaled MSE {peak:.4} at θ = {}",
                c.n, c.theta_grid[i][0]
            )
        })
        .collect();
    Ok(Outcome {
        passed: true,
        files,
        summary,
    })
}

/// Dimension of the parameter for grid-based runs.
fn grid_dim(cfg: &RunConfig) -> Result<usize, Failure> {
    let base = &cfg.grid()?.base;
    Ok(match cfg.dgp()? {
        DgpConfig::NormalMean { cov } => cov.len(),
        _ if !base.is_empty() => base.len(),
        _ => cfg.center.as_ref().map_or(1, Vec::len),
    })
}

fn sweep_curves(
    cfg: &RunConfig,
    estimators: impl Fn(u64) -> Vec<EstimatorSpec>,
) -> Result<Vec<RiskCurve>, Failure> {
    let template = cfg.dgp()?.template()?;
    let grid = cfg.grid()?.points(grid_dim(cfg)?)?;
    let mut curves = Vec::new();
    for &n in cfg.n_values()? {
        let run = RunSpec {
            n,
            reps: cfg.reps()?,
            seed: cfg.seed,
            sampling: cfg.sampling(),
        };
        curves.extend(mc_risk_many(
            &estimators(n),
            &template,
            &grid,
            cfg.losses()?,
            &run,
        )?);
    }
    Ok(curves)
}

fn curve_summary(curves: &[RiskCurve]) -> Vec<String> {
    curves
        .iter()
        .map(|c| {
            let (i, max) = c.max_estimate();
            format!(
                "{} / {} / n = {}: max risk {max:.4} at θ = {:?}",
                c.estimator_id, c.loss_id, c.n, c.theta_grid[i]
            )
        })
        .collect()
}

fn risk_sweep(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let estimators = cfg
        .estimators
        .clone()
        .ok_or_else(|| Failure::Config("missing `estimators`".into()))?;
    let curves = sweep_curves(cfg, |_| estimators.clone())?;
    let path = cfg.out.join("risk_sweep.csv");
    write_curves_file(&curves, &path, &preamble(cfg))?;
    Ok(Outcome {
        passed: true,
        files: vec![path],
        summary: curve_summary(&curves),
    })
}

/// Base estimator, both Hodges estimators and hard/soft/SCAD thresholding
/// at the level of the first threshold. Regression penalties act on
/// `X'y`, whose scale is `‖x_j‖² ≈ n`, so their λ is `n·a_n`.
fn baseline_estimators(cfg: &RunConfig, n: u64) -> Result<Vec<EstimatorSpec>, Failure> {
    let center = cfg.center()?.to_vec();
    let schedule = cfg.schedule()?;
    let a = schedule.thresholds[0].at(n);
    let lambda = if cfg.dgp()?.is_regression() {
        n as f64 * a
    } else {
        a
    };
    Ok(vec![
        EstimatorSpec::Base,
        EstimatorSpec::ClassicalHodges {
            center: center.clone(),
            threshold: schedule.thresholds[0],
        },
        EstimatorSpec::OracleHodges {
            center,
            thresholds: schedule.thresholds.clone(),
        },
        EstimatorSpec::Threshold {
            penalty: PenaltySpec::hard(lambda),
        },
        EstimatorSpec::Threshold {
            penalty: PenaltySpec::soft(lambda),
        },
        EstimatorSpec::Threshold {
            penalty: PenaltySpec::scad(lambda),
        },
    ])
}

fn baseline_compare(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let d = grid_dim(cfg)?;
    if cfg.center()?.len() != d {
        return Err(Failure::Config(format!("center must have {d} coordinates")));
    }
    let per_n = cfg
        .n_values()?
        .iter()
        .map(|&n| match &cfg.estimators {
            Some(list) => Ok(list.clone()),
            None => baseline_estimators(cfg, n),
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let n_values = cfg.n_values()?.to_vec();
    let curves = sweep_curves(cfg, |n| {
        per_n[n_values
            .iter()
            .position(|&m| m == n)
            .expect("n from the list")]
        .clone()
    })?;
    let path = cfg.out.join("baseline_compare.csv");
    write_curves_file(&curves, &path, &preamble(cfg))?;
    Ok(Outcome {
        passed: true,
        files: vec![path],
        summary: curve_summary(&curves),
    })
}

fn verify_bounds(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let b = cfg.bounds()?;
    let schedule = cfg.schedule()?;
    let c = cfg.center()?;
    let r = schedule.rate_at(b.n);
    let a = schedule.thresholds_at(b.n);
    let a_min = schedule.min_threshold(b.n);
    let n_star = schedule.min_sample_size(b.k);
    if !(r * a_min > 2.0 * b.k) {
        let from = n_star.map_or("no n".to_string(), |n| format!("n ≥ {n}"));
        return Err(Failure::Config(format!(
            "schedule error: r_n·a_n = {} ≤ 2k = {} at n = {}; the regions are nonempty for {from}",
            r * a_min,
            2.0 * b.k,
            b.n
        )));
    }
    let sweep = SweepSpec {
        points: b.points,
        realizations_per_point: b.realizations_per_point,
        seed: cfg.seed,
    };
    let mut reports: Vec<BoundReport> = Vec::new();
    if matches!(b.theorem, Theorem::Classical | Theorem::Both) {
        reports.push(classical_bound_sweep(
            &ring_region(c, b.k, r, a_min)?,
            &sweep,
        )?);
    }
    if matches!(b.theorem, Theorem::Oracle | Theorem::Both) {
        let spec = RegionSpec::new(c.to_vec(), a, r, b.k)?;
        let v = CovSpec::new(matrix(&b.precision, "bounds.precision")?)?;
        reports.push(oracle_bound_sweep(&spec, &v, &sweep)?);
    }
    let mut files = Vec::new();
    let mut summary = Vec::new();
    let mut passed = true;
    for mut report in reports {
        report.n = Some(b.n);
        report.min_sample_size = n_star;
        let path = cfg.out.join(format!("bounds_{}.json", report.theorem));
        summary.push(format!(
            "{}: {} points × {} realizations, {} violations, {} range violations, min scaled error {:.6} (k = {})",
            report.theorem,
            report.points_checked,
            report.realizations_per_point,
            report.violation_count,
            report.range_violations,
            report.min_scaled_error,
            report.k
        ));
        passed &= report.passed();
        let mut body = to_value(&report);
        body["passed"] = Value::Bool(report.passed());
        write_json(&path, cfg, body)?;
        files.push(path);
    }
    Ok(Outcome {
        passed,
        files,
        summary,
    })
}

#[derive(Serialize)]
struct CheckRow {
    name: String,
    passed: bool,
    detail: String,
}

/// Exact probability that `θ̂_j` lands within `a_j` of `c_j`, when the base
/// estimator's finite-sample law is known.
fn exact_selection(
    dgp: &DgpSpec,
    n: u64,
    c: &[f64],
    a: &[f64],
) -> Result<Option<Vec<f64>>, Failure> {
    let theta = dgp.theta();
    Ok(match dgp {
        DgpSpec::NormalMean { .. } | DgpSpec::LinearModel { .. } => {
            let cov = dgp.precision()?.covariance()?;
            Some(
                (0..theta.len())
                    .map(|j| {
                        let sd = (cov[(j, j)] / n as f64).sqrt();
                        interval_prob((c[j] - a[j] - theta[j]) / sd, (c[j] + a[j] - theta[j]) / sd)
                    })
                    .collect(),
            )
        }
        // θ̂_j is the maximum of n uniforms on [0, θ_j]: P(θ̂_j ≤ x) = (x/θ_j)ⁿ.
        DgpSpec::UniformBox { .. } => {
            let cdf = |x: f64, t: f64| (x / t).clamp(0.0, 1.0).powf(n as f64);
            Some(
                (0..theta.len())
                    .map(|j| cdf(c[j] + a[j], theta[j]) - cdf(c[j] - a[j], theta[j]))
                    .collect(),
            )
        }
    })
}

fn oracle_check(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let o = cfg.oracle()?;
    let theta = cfg.theta()?;
    let c = cfg.center()?;
    let schedule = cfg.schedule()?;
    let dgp_cfg = cfg.dgp()?;
    let template = dgp_cfg.template()?;
    let reps = cfg.reps()?;
    let n_values = cfg.n_values()?;
    if n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::Config(
            "n_values must be strictly increasing".into(),
        ));
    }
    let est = EstimatorSpec::OracleHodges {
        center: c.to_vec(),
        thresholds: schedule.thresholds.clone(),
    };
    let d = theta.len();

    let mut reports: Vec<SelectionReport> = Vec::new();
    let mut expected: Vec<Option<Vec<f64>>> = Vec::new();
    for &n in n_values {
        let run = RunSpec {
            n,
            reps,
            seed: cfg.seed,
            sampling: cfg.sampling(),
        };
        reports.push(selection_probability(&est, &template, theta, &run)?);
        expected.push(exact_selection(
            &template.instantiate(theta, n)?,
            n,
            c,
            &schedule.thresholds_at(n),
        )?);
    }

    let mut checks = Vec::new();
    let mut check = |name: String, passed: bool, detail: String| {
        checks.push(CheckRow {
            name,
            passed,
            detail,
        })
    };
    let floor = 1.0 / reps as f64;
    for (rep, exp) in reports.iter().zip(&expected) {
        let Some(exp) = exp else { continue };
        for (j, (p, &e)) in rep.per_coordinate.iter().zip(exp).enumerate() {
            let se = p
                .std_error
                .max((e * (1.0 - e) / reps as f64).sqrt())
                .max(floor);
            let z = (p.p - e).abs() / se;
            check(
                format!("selection n={} coordinate {}", rep.n, j + 1),
                z <= o.selection_z,
                format!("P(θ̃_j = c_j) = {:.5} vs exact {e:.5}, z = {z:.2}", p.p),
            );
        }
    }
    let last = reports.last().expect("n_values is nonempty");
    for j in 0..d {
        let inactive = theta[j] == c[j];
        if inactive {
            let monotone = reports.windows(2).all(|w| {
                let (p0, p1) = (w[0].per_coordinate[j], w[1].per_coordinate[j]);
                p1.p >= p0.p - o.selection_z * (p0.std_error.powi(2) + p1.std_error.powi(2)).sqrt()
            });
            let probs: Vec<f64> = reports.iter().map(|r| r.per_coordinate[j].p).collect();
            check(
                format!("coordinate {} set to c increasingly often", j + 1),
                monotone,
                format!("{probs:.5?}"),
            );
        }
        let correct = if inactive {
            last.per_coordinate[j].p
        } else {
            1.0 - last.per_coordinate[j].p
        };
        check(
            format!("coordinate {} correctly selected at n={}", j + 1, last.n),
            correct >= o.min_selection,
            format!("{correct:.5} (≥ {})", o.min_selection),
        );
    }

    let mut cov_json = Value::Null;
    let n_max = last.n;
    if matches!(dgp_cfg, DgpConfig::UniformBox) {
        check(
            "scaled covariance".into(),
            true,
            "skipped: the uniform-box limit law is not Gaussian".into(),
        );
    } else if reps < 10_000 {
        check(
            "scaled covariance".into(),
            true,
            format!("skipped: needs ≥ 10⁴ replications, have {reps}"),
        );
    } else {
        let run = RunSpec {
            n: n_max,
            reps,
            seed: cfg.seed,
            sampling: cfg.sampling(),
        };
        let rep: ScaledCovReport = empirical_scaled_cov(&est, &template, theta, &run)?;
        let k = rep.cov.nrows();
        let mut worst = 0.0f64;
        for i in 0..k {
            for l in 0..k {
                worst = worst.max(
                    (rep.cov[(i, l)] - rep.oracle_cov[(i, l)]).abs() / rep.cov_std_error[(i, l)],
                );
            }
        }
        check(
            format!("scaled covariance at n={n_max} matches the known-support limit"),
            k == 0 || worst <= o.cov_z,
            format!(
                "max |cov − V_bb⁻¹|/SE = {worst:.2} over {} matched replications",
                rep.matched
            ),
        );
        check(
            "inactive coordinates exactly at c".into(),
            rep.max_inactive_deviation == 0.0,
            format!("max deviation {:e}", rep.max_inactive_deviation),
        );
        cov_json = json!({
            "n": n_max,
            "support": rep.support.active(),
            "reps": rep.reps,
            "matched": rep.matched,
            "mean": rep.mean,
            "cov": rows(&rep.cov),
            "cov_std_error": rows(&rep.cov_std_error),
            "oracle_cov": rows(&rep.oracle_cov),
            "base_cov": rows(&rep.base_cov),
            "max_inactive_deviation": rep.max_inactive_deviation,
        });
    }
    let passed = checks.iter().all(|c| c.passed);

    let csv_path = cfg.out.join("oracle_check.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    write_preamble(&mut w, cfg)?;
    writeln!(
        w,
        "n,coordinate,theta,center,threshold,selected,std_error,expected"
    )?;
    for (rep, exp) in reports.iter().zip(&expected) {
        let a = schedule.thresholds_at(rep.n);
        for j in 0..d {
            let p = rep.per_coordinate[j];
            let e = exp
                .as_ref()
                .map_or(String::new(), |e| format!("{:.16e}", e[j]));
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{e}",
                rep.n,
                j + 1,
                theta[j],
                c[j],
                a[j],
                p.p,
                p.std_error
            )?;
        }
    }
    w.flush()?;

    let json_path = cfg.out.join("oracle_check.json");
    let body = json!({
        "selection": reports,
        "expected_selection": expected,
        "scaled_cov": cov_json,
        "checks": checks,
        "passed": passed,
    });
    write_json(&json_path, cfg, body)?;

    let mut summary = Vec::new();
    for c in &checks {
        let mut line = String::new();
        let _ = write!(
            line,
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
        summary.push(line);
    }
    Ok(Outcome {
        passed,
        files: vec![csv_path, json_path],
        summary,
    })
}

fn simulate_data(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let n = cfg.n.ok_or_else(|| Failure::Config("missing `n`".into()))?;
    let dgp = cfg.dgp()?.template()?.instantiate(cfg.theta()?, n)?;
    let data = simulate(&dgp, n as usize, cfg.seed)?;
    let estimate = match &dgp {
        DgpSpec::NormalMean { cov, .. } => mle_normal_mean(&data, cov)?,
        DgpSpec::LinearModel { .. } => lse_linear(&data)?,
        DgpSpec::UniformBox { .. } => mle_uniform_box(&data)?,
    };
    let csv_path = cfg.out.join("simulate.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    write_preamble(&mut w, cfg)?;
    data.write_csv(&mut w)?;
    w.flush()?;
    let json_path = cfg.out.join("simulate.json");
    let body = json!({
        "model": dgp.tag(),
        "n": n,
        "columns": data.column_names(),
        "theta_hat": estimate.theta_hat,
        "r_n": estimate.r_n,
    });
    write_json(&json_path, cfg, body)?;
    let summary = vec![format!(
        "{} observations; base estimate {:?}",
        n, estimate.theta_hat
    )];
    Ok(Outcome {
        passed: true,
        files: vec![csv_path, json_path],
        summary,
    })
}
