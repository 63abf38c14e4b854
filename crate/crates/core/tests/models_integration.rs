use hodges_core::models::{
    mle_normal_mean, mle_uniform_box, simulate, BaseSampler, DgpSpec, Sampling,
};
use hodges_core::rng::substream;
use nalgebra::DMatrix;

fn ks_distance(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let m = x.len() as f64;
    x.iter().enumerate().fold(0.0f64, |d, (i, &xi)| {
        let f = cdf(xi);
        d.max((f - i as f64 / m).abs())
            .max(((i + 1) as f64 / m - f).abs())
    })
}

#[test]
fn uniform_maximum_follows_its_finite_sample_law() {
    let theta = 2.0;
    let n = 1000usize;
    let dgp = DgpSpec::UniformBox { theta: vec![theta] };
    let x: Vec<f64> = (0..3000u64)
        .map(|r| {
            n as f64
                * (mle_uniform_box(&simulate(&dgp, n, r).unwrap())
                    .unwrap()
                    .theta_hat[0]
                    - theta)
        })
        .collect();
    assert!(x.iter().all(|&v| v <= 0.0 && v >= -(n as f64) * theta));
    // P(n(θ̂ − θ) ≤ x) = (1 + x/(nθ))ⁿ, and its limit e^{x/θ} is within 1/n of it.
    let finite = ks_distance(x.clone(), |v| {
        (1.0 + v / (n as f64 * theta)).max(0.0).powi(n as i32)
    });
    let limit = ks_distance(x, |v| (v / theta).exp().min(1.0));
    // 1% critical value of the one-sample KS statistic at m = 3000.
    let crit = 1.63 / 3000f64.sqrt();
    assert!(finite <= crit, "{finite}");
    assert!(limit <= crit + 1.0 / n as f64, "{limit}");
}

#[test]
fn uniform_rate_is_n_not_root_n() {
    let theta = [1.0, 3.0];
    let dgp = DgpSpec::UniformBox {
        theta: theta.to_vec(),
    };
    let median = |n: usize, scale: f64, k: usize| {
        let sampler = BaseSampler::new(&dgp, n, Sampling::FullData).unwrap();
        let mut dev: Vec<f64> = (0..2001u64)
            .map(|r| {
                scale
                    * (theta[k]
                        - sampler
                            .draw(&mut substream(9, &[n as u64, r]))
                            .unwrap()
                            .base
                            .theta_hat[k])
            })
            .collect();
        dev.sort_by(f64::total_cmp);
        dev[1000]
    };
    for (k, t) in theta.iter().enumerate() {
        // n(θ − θ̂) is asymptotically exponential with mean θ, so its median is θ ln 2.
        let target = t * std::f64::consts::LN_2;
        let mut root = Vec::new();
        for n in [100usize, 1000, 10_000] {
            let m = median(n, n as f64, k);
            assert!(
                (m - target).abs() <= 0.1 * target,
                "n={n}: median {m} vs {target}"
            );
            root.push(median(n, (n as f64).sqrt(), k));
        }
        assert!(root.windows(2).all(|w| w[1] < 0.5 * w[0]), "{root:?}");
    }
}

#[test]
fn normal_mean_covariance_matches_sigma() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
    let dgp = DgpSpec::NormalMean {
        theta: vec![0.5, -1.0],
        cov: sigma.clone(),
    };
    let n = 50usize;
    let reps = 20_000u64;
    let z: Vec<[f64; 2]> = (0..reps)
        .map(|r| {
            let est = mle_normal_mean(&simulate(&dgp, n, r).unwrap(), &sigma).unwrap();
            let s = (n as f64).sqrt();
            [s * (est.theta_hat[0] - 0.5), s * (est.theta_hat[1] + 1.0)]
        })
        .collect();
    let m = reps as f64;
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        let prods: Vec<f64> = z.iter().map(|v| v[i] * v[j]).collect();
        let mean = prods.iter().sum::<f64>() / m;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        assert!(
            (mean - sigma[(i, j)]).abs() <= 5.0 * se,
            "({i},{j}): {mean} vs {}",
            sigma[(i, j)]
        );
    }
}
