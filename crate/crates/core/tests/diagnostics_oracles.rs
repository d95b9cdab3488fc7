use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scrm_core::diagnostics::{estimator_study, gaussian_weight_variance, mc_risk_oracle, skyline, STUDY_ESTIMATORS};
use scrm_core::env::GaussianQuadratic;
use scrm_core::rng::Streams;
use scrm_core::{EnvSpec, ModelParams, OptimizerConfig, PolicySpec};

#[test]
fn weight_variance_matches_sampling() {
    let (theta, star, sigma) = (0.3, 0.0, 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(star, sigma).unwrap();
    let n = 400_000;
    let w: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = normal.sample(&mut r);
            (-((a - theta).powi(2) - (a - star).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let m = w.iter().sum::<f64>() / n as f64;
    let sq: Vec<f64> = w.iter().map(|v| (v - m).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (n - 1) as f64;
    let sq_mean = var;
    let fourth = sq.iter().map(|s| (s - sq_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stderr = (fourth / n as f64).sqrt();
    let exact = gaussian_weight_variance(theta, star, sigma).unwrap();
    assert!((var - exact).abs() <= 4.0 * stderr, "{var} vs {exact} (se {stderr})");
}

#[test]
fn monte_carlo_oracle_tracks_closed_form() {
    let env = EnvSpec::GaussianQuadratic(GaussianQuadratic::default());
    let spec = PolicySpec::gaussian(0.5).with_intercept(true);
    let theta = ModelParams::new(vec![0.4]).unwrap();
    let exact = env.closed_form_risk(&spec, &theta).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let small = mc_risk_oracle(&env, &spec, &theta, 20_000, &mut r).unwrap();
    let large = mc_risk_oracle(&env, &spec, &theta, 80_000, &mut r).unwrap();
    assert!((small.mean - exact).abs() <= 4.0 * small.stderr);
    assert!((large.mean - exact).abs() <= 4.0 * large.stderr);
    let ratio = small.stderr / large.stderr;
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(
        mc_risk_oracle(&env, &spec, &theta, 100, &mut r1).unwrap(),
        mc_risk_oracle(&env, &spec, &theta, 100, &mut r2).unwrap()
    );
}

#[test]
fn on_policy_study_is_unbiased() {
    let rows = estimator_study(&[0.0], &STUDY_ESTIMATORS, 200, 200, &Streams::new(3)).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!((r.summary.truth - (-0.5f64).exp()).abs() < 1e-10);
        // IPS-IX at alpha = 1/n is within 1/n of the unbiased estimate
        let slack = if r.estimator == scrm_core::EstimatorVariant::IpsIx { 1.0 / 200.0 } else { 0.0 };
        assert!(r.summary.bias.abs() <= 3.0 * r.summary.stderr + slack, "{r:?}");
    }
}

#[test]
fn skyline_recovers_the_known_optimum() {
    let env = EnvSpec::GaussianQuadratic(GaussianQuadratic::default());
    let spec = PolicySpec::gaussian(0.3).with_intercept(true);
    let fit = skyline(
        &env,
        &spec,
        &ModelParams::new(vec![0.0]).unwrap(),
        4000,
        20_000,
        &OptimizerConfig::default(),
        &Streams::new(4),
    )
    .unwrap();
    assert!((fit.theta.as_slice()[0] - 1.0).abs() < 0.05, "{:?}", fit.theta);
    let best = env.closed_form_risk(&spec, &ModelParams::new(vec![1.0]).unwrap()).unwrap();
    assert!((fit.risk.mean - best).abs() <= 4.0 * fit.risk.stderr + 1e-3);
}
