mod support;

use proptest::prelude::*;
use rand::Rng;
use scrm_core::objective::{svp_gradient, svp_objective};
use scrm_core::policy::{grad_log_density, log_density, Family};
use scrm_core::{ModelParams, ObjectiveConfig};
use support::{logged_batch, random_params, rng, spec_for};

const FAMILIES: [Family; 3] = [Family::GaussianLinear, Family::Lognormal, Family::SoftmaxKronecker];

fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            probe[j] = theta[j] + h;
            let up = f(&probe);
            probe[j] = theta[j] - h;
            let down = f(&probe);
            probe[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let diff = g.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut r = rng(20);
    let mut worst = 0.0f64;
    for config in 0..120 {
        let family = FAMILIES[config % 3];
        let spec = spec_for(family, &mut r);
        let k = r.random_range(0..3);
        let d = spec.param_dim(k);
        let behavior = random_params(d, 0.5, &mut r);
        let data = logged_batch(&spec, &behavior, k, r.random_range(5..40), &mut r);
        let theta = random_params(d, 0.7, &mut r);
        let cfg = ObjectiveConfig::new(r.random_range(0.0..4.0), r.random_range(0.0..0.5), d);
        let g = svp_gradient(&data, &spec, &theta, &cfg).unwrap();
        let fd = central_difference(
            |t| svp_objective(&data, &spec, &ModelParams::new(t.to_vec()).unwrap(), &cfg).unwrap(),
            theta.as_slice(),
            1e-6,
        );
        let err = relative_error(&g, &fd);
        worst = worst.max(err);
        assert!(err <= 1e-4, "config {config} ({family:?}): {g:?} vs {fd:?}");
    }
    assert!(worst <= 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_function_matches_log_density(seed in 0u64..10_000, family in 0usize..3) {
        let mut r = rng(seed);
        let spec = spec_for(FAMILIES[family], &mut r);
        let k = r.random_range(0..4);
        let d = spec.param_dim(k);
        let theta = random_params(d, 1.0, &mut r);
        let it = &logged_batch(&spec, &theta, k, 1, &mut r)[0];
        let score = grad_log_density(&spec, &theta, &it.x, &it.a).unwrap();
        let fd = central_difference(
            |t| log_density(&spec, &ModelParams::new(t.to_vec()).unwrap(), &it.x, &it.a).unwrap(),
            theta.as_slice(),
            1e-6,
        );
        prop_assert!(relative_error(&score, &fd) <= 1e-5, "{:?} vs {:?}", score, fd);
    }
}
