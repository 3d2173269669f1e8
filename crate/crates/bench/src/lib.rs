//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use seqmh_core::models::{synth_logistic_dataset, LogisticRegression};
use seqmh_core::VecPopulation;

/// `n` log-likelihood differences with mean `mean` and spread `sd`, uniform noise.
pub fn population(n: usize, mean: f64, sd: f64, seed: u64) -> VecPopulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_width = sd * 3f64.sqrt();
    VecPopulation((0..n).map(|_| mean + rng.random_range(-half_width..half_width)).collect())
}

/// A synthetic logistic model and a nearby parameter pair.
pub fn logistic_pair(n: usize, d: usize, seed: u64) -> (LogisticRegression, Vec<f64>, Vec<f64>) {
    let model = synth_logistic_dataset(n, d, seed).expect("valid sizes");
    let theta: Vec<f64> = (0..d).map(|j| 0.1 * j as f64).collect();
    let theta_p: Vec<f64> = theta.iter().map(|t| t + 0.01).collect();
    (model, theta, theta_p)
}
