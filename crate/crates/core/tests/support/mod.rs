#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scrm_core::policy::{sample_action, Family};
use scrm_core::{Interaction, ModelParams, PolicySpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spec_for(family: Family, rng: &mut impl Rng) -> PolicySpec {
    match family {
        Family::GaussianLinear => PolicySpec::gaussian(rng.random_range(0.3..2.0)).with_intercept(rng.random()),
        Family::Lognormal => PolicySpec::lognormal(rng.random_range(0.2..1.0)).with_intercept(rng.random()),
        Family::SoftmaxKronecker => {
            PolicySpec::softmax_kronecker(rng.random_range(1..=3), rng.random_range(0.0..0.3)).with_intercept(rng.random())
        }
    }
}

pub fn random_params(dim: usize, scale: f64, rng: &mut impl Rng) -> ModelParams {
    ModelParams::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Logs `n` interactions of `behavior` with uniform contexts in `[-1, 1]^k`
/// and losses uniform in `[-1, 0]`.
pub fn logged_batch(spec: &PolicySpec, behavior: &ModelParams, k: usize, n: usize, rng: &mut impl Rng) -> Vec<Interaction> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, propensity) = sample_action(spec, behavior, &x, rng).unwrap();
            Interaction {
                x,
                a,
                y: -rng.random::<f64>(),
                propensity,
            }
        })
        .collect()
}

/// Two-pass sample variance with the `n - 1` denominator.
pub fn two_pass_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}
