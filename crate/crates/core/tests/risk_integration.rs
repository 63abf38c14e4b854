use hodges_core::bounds::ring_region;
use hodges_core::estimators::Transition;
use hodges_core::models::DesignSpec;
use hodges_core::risk::{
    closed_form_loss_sd_normal_1d, closed_form_risk_normal_1d, empirical_scaled_cov, fig1_sweep,
    mc_risk, mc_risk_many, read_curves_csv, selection_probability, tail_mass_diagnostic,
    write_curves_csv, DgpTemplate, EstimatorSpec, Fig1Config, GridSpec, LossFn, LossSpec, RunSpec,
};
use hodges_core::schedule::PowerLaw;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_m.
fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    (0..m)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite 20-point Gauss–Legendre quadrature on panels of width ≤ 0.05.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gauss_legendre(20);
    let panels = ((b - a) / 0.05).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        total += rule
            .iter()
            .map(|(x, w)| w * f(mid + 0.5 * h * x))
            .sum::<f64>()
            * 0.5
            * h;
    }
    total
}

/// `n E[(θ̆ − θ)²]` by integrating the loss against the density of
/// `Z = √n (X̄ − θ)`, split at the dead-zone edges.
fn quadrature_risk(theta: f64, n: u64, a_n: f64, c: f64) -> f64 {
    let s = (n as f64).sqrt();
    let lo = s * (c - a_n - theta);
    let hi = s * (c + a_n - theta);
    let collapsed = n as f64 * (c - theta) * (c - theta);
    let tail = |z: f64| z * z * phi(z);
    let dead = |z: f64| collapsed * phi(z);
    integrate(&tail, -40.0, lo.min(40.0))
        + integrate(&dead, lo.max(-40.0), hi.min(40.0))
        + integrate(&tail, hi.max(-40.0), 40.0)
}

#[test]
fn closed_form_matches_quadrature() {
    for n in [1u64, 5, 50, 500, 5000] {
        let a = (n as f64).powf(-0.25);
        for i in 0..=60 {
            let theta = -1.5 + i as f64 * 0.05;
            for c in [0.0, 0.3] {
                let exact = closed_form_risk_normal_1d(theta, n, a, c);
                let quad = quadrature_risk(theta, n, a, c);
                assert!(
                    (exact - quad).abs() <= 1e-10 * quad.abs(),
                    "n={n} θ={theta} c={c}: {exact} vs {quad}"
                );
            }
        }
    }
    // A vanishing dead zone leaves the mean's risk.
    assert!((closed_form_risk_normal_1d(0.4, 50, 1e-14, 0.0) - 1.0).abs() < 1e-10);
}

#[test]
fn closed_form_sd_matches_quadrature() {
    let (n, a, c) = (500u64, 500f64.powf(-0.25), 0.0);
    for theta in [0.0, 0.1, 0.2, 1.0] {
        let s = (n as f64).sqrt();
        let (lo, hi) = (s * (c - a - theta), s * (c + a - theta));
        let collapsed = n as f64 * (c - theta) * (c - theta);
        let second = integrate(&|z: f64| z.powi(4) * phi(z), -40.0, lo)
            + integrate(&|z: f64| collapsed * collapsed * phi(z), lo, hi)
            + integrate(&|z: f64| z.powi(4) * phi(z), hi, 40.0);
        let mean = quadrature_risk(theta, n, a, c);
        let sd = (second - mean * mean).sqrt();
        let exact = closed_form_loss_sd_normal_1d(theta, n, a, c);
        assert!(
            (exact - sd).abs() <= 1e-8 * sd,
            "θ={theta}: {exact} vs {sd}"
        );
    }
}

fn csv_bytes(workers: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap();
    pool.install(|| {
        let grid = GridSpec::line(-0.5, 0.5, 0.25).points(2).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let estimators = [
            EstimatorSpec::Base,
            EstimatorSpec::oracle_default(vec![0.0, 0.0]),
            EstimatorSpec::SmoothOracleHodges {
                center: vec![0.0, 0.0],
                inner: vec![PowerLaw::new(1.0, 0.25); 2],
                outer: vec![PowerLaw::new(2.0, 0.25); 2],
                transition: Transition::Linear,
            },
        ];
        let losses = [LossSpec::ScaledMse, LossSpec::Indicator { z: 1.0 }];
        let curves = mc_risk_many(
            &estimators,
            &DgpTemplate::NormalMean { cov },
            &grid,
            &losses,
            &RunSpec::new(50, 2000, 99),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&curves, &mut buf, &["determinism".into()]).unwrap();
        buf
    })
}

#[test]
fn output_is_identical_for_any_worker_count() {
    let one = csv_bytes(1);
    assert_eq!(one, csv_bytes(3));
    assert_eq!(one, csv_bytes(8));
    let curves = read_curves_csv(&one[..]).unwrap();
    assert_eq!(curves.len(), 6);
    assert!(curves.iter().all(|c| c.estimates.iter().all(|&v| v >= 0.0)));
}

#[test]
fn indicator_risk_is_one_throughout_the_ring() {
    let n = 500u64;
    let a = (n as f64).powf(-0.25);
    let ring = ring_region(&[0.0], 1.0, (n as f64).sqrt(), a).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid: Vec<Vec<f64>> = (0..20).map(|_| ring.sample(&mut rng)).collect();
    let est = EstimatorSpec::classical_default(vec![0.0]);
    for z in [0.0, 0.5, 0.99] {
        let curve = mc_risk(
            &est,
            &DgpTemplate::standard_normal(1),
            &grid,
            &LossSpec::Indicator { z },
            &RunSpec::new(n, 5000, 8),
        )
        .unwrap();
        assert!(curve.estimates.iter().all(|&v| v == 1.0));
        assert!(curve.std_errors.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn power_and_rate_losses_are_consistent() {
    // For l(u) = u² both normalizations equal the scaled MSE.
    let grid = vec![vec![0.1], vec![0.7]];
    let sq = LossFn::Power { p: 2.0 };
    let losses = [
        LossSpec::ScaledMse,
        LossSpec::Power { loss: sq.clone() },
        LossSpec::RateLoss { loss: sq },
    ];
    let curves = mc_risk_many(
        &[EstimatorSpec::classical_default(vec![0.0])],
        &DgpTemplate::standard_normal(1),
        &grid,
        &losses,
        &RunSpec::new(50, 1000, 1),
    )
    .unwrap();
    for k in 0..grid.len() {
        let base = curves[0].estimates[k];
        for c in &curves[1..] {
            assert!((c.estimates[k] - base).abs() <= 1e-12 * base);
        }
    }
}

#[test]
fn tail_mass_of_normal_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples: Vec<f64> = (0..100_000)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let m_grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
    let rows = tail_mass_diagnostic(&samples, &m_grid).unwrap();
    let half_normal_mean = (2.0 / std::f64::consts::PI).sqrt();
    assert!((rows[0].value - half_normal_mean).abs() <= 3.0 * rows[0].std_error);
    assert!(rows.windows(2).all(|w| w[0].value >= w[1].value));
}

#[test]
fn selection_examples() {
    let est = EstimatorSpec::oracle_default(vec![0.0, 0.0]);
    // Neither coordinate at the center: selection at c vanishes.
    let rep = selection_probability(
        &est,
        &DgpTemplate::standard_normal(2),
        &[0.5, -0.3],
        &RunSpec::new(10_000, 2000, 3),
    )
    .unwrap();
    assert!(rep.per_coordinate.iter().all(|p| p.p < 0.01));

    // θ = c with correlated noise: marginal variances enter the exact mass.
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let n = 100u64;
    let rep = selection_probability(
        &est,
        &DgpTemplate::NormalMean { cov },
        &[0.0, 0.0],
        &RunSpec::new(n, 20_000, 5),
    )
    .unwrap();
    let bound = (n as f64).sqrt() * (n as f64).powf(-0.25) / 2f64.sqrt();
    let erf_mass = 1.0 - 2.0 * normal_sf(bound);
    for p in &rep.per_coordinate {
        assert!(
            (p.p - erf_mass).abs() <= 3.0 * p.std_error,
            "{p:?} vs {erf_mass}"
        );
    }
    let min = rep.per_coordinate.iter().map(|p| p.p).fold(1.0, f64::min);
    let union = 1.0 - rep.per_coordinate.iter().map(|p| 1.0 - p.p).sum::<f64>();
    assert!(rep.joint.p <= min && rep.joint.p >= union);
}

/// Upper normal tail by quadrature, independent of the library.
fn normal_sf(x: f64) -> f64 {
    integrate(&phi, x, 40.0)
}

#[test]
fn scaled_covariance_examples() {
    let est = EstimatorSpec::oracle_default(vec![0.0, 0.0]);
    // Σ = V⁻¹ for V = [[2,1],[1,2]].
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0]);
    let template = DgpTemplate::NormalMean { cov: sigma.clone() };
    let rep =
        empirical_scaled_cov(&est, &template, &[2.0, 0.0], &RunSpec::new(2500, 20_000, 6)).unwrap();
    assert!((rep.oracle_cov[(0, 0)] - 0.5).abs() < 1e-12);
    assert!((rep.base_cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
    assert!(
        (rep.cov[(0, 0)] - 0.5).abs() <= 5.0 * rep.cov_std_error[(0, 0)],
        "{}",
        rep.cov
    );
    assert_eq!(rep.max_inactive_deviation, 0.0);

    // Both coordinates away from the center: the full covariance V⁻¹.
    let rep = empirical_scaled_cov(
        &est,
        &template,
        &[2.0, -1.0],
        &RunSpec::new(2500, 20_000, 7),
    )
    .unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((rep.cov[(i, j)] - sigma[(i, j)]).abs() <= 5.0 * rep.cov_std_error[(i, j)]);
        }
    }
}

#[test]
fn linear_model_risk_runs_all_estimators() {
    let template = DgpTemplate::LinearModel {
        sigma2: 1.0,
        design: DesignSpec::Gaussian { seed: 2 },
    };
    let estimators = [
        EstimatorSpec::Base,
        EstimatorSpec::oracle_default(vec![0.0; 3]),
        EstimatorSpec::Oracle {
            center: vec![0.0; 3],
        },
        EstimatorSpec::Threshold {
            penalty: hodges_core::baselines::PenaltySpec::scad(2.0),
        },
    ];
    let curves = mc_risk_many(
        &estimators,
        &template,
        &[vec![1.0, 0.0, -0.5]],
        &[LossSpec::ScaledMse],
        &RunSpec::new(200, 200, 1),
    )
    .unwrap();
    assert_eq!(curves.len(), 4);
    // Knowing the support cannot hurt: the oracle beats the full fit.
    assert!(curves[2].estimates[0] < curves[0].estimates[0]);
}

#[test]
fn fig1_writes_four_files() {
    let cfg = Fig1Config {
        reps: 200,
        grid: GridSpec::line(-1.0, 1.0, 0.5),
        ..Fig1Config::default()
    };
    let res = fig1_sweep(&cfg, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = res.write_csv(dir.path(), &["seed = 17".into()]).unwrap();
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "fig1_n5.csv",
            "fig1_n50.csv",
            "fig1_n500.csv",
            "fig1_combined.csv"
        ]
    );
    let combined = read_curves_csv(std::fs::File::open(&paths[3]).unwrap()).unwrap();
    assert_eq!(combined.len(), 6);
    assert_eq!(combined[3].estimator_id, "closed_form_classical_hodges");
    assert_eq!(combined[3].theta_grid, res.monte_carlo[0].theta_grid);
}
