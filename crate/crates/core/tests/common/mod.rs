//! Instances shared by the integration tests.

#![allow(dead_code)]

use drccmdp_core::ambiguity::{RiskLevel, Support};
use drccmdp_core::mdp::MdpModel;
use drccmdp_core::wasserstein::{ScenarioSet, WassersteinAmbiguity};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MDP with dense transition rows and a uniform initial distribution.
pub fn random_mdp(n_states: usize, n_actions: usize, seed: u64) -> MdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = (0..n_states)
        .map(|_| (0..n_actions).map(|a| format!("a{a}")).collect())
        .collect();
    let kernel = (0..n_states * n_actions)
        .map(|_| {
            let w: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().enumerate().map(|(j, v)| (j, v / s)).collect()
        })
        .collect();
    MdpModel::from_kernel(actions, kernel, 0.85, vec![1.0 / n_states as f64; n_states]).unwrap()
}

/// Mean vector and covariance `A A' / n + I` with `A` uniform on `[0, 1]`.
pub fn random_moments(n: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let mu = (0..n).map(|_| rng.gen_range(5.0..20.0)).collect();
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
    let sigma = &a * a.transpose() / n as f64 + DMatrix::identity(n, n);
    (mu, sigma)
}

pub fn uniform_scenarios(h: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..h)
        .map(|_| (0..dim).map(|_| rng.gen_range(lo..hi)).collect())
        .collect();
    ScenarioSet::from_rows(rows).unwrap()
}

pub fn wasserstein(s: ScenarioSet, theta: f64, eps: f64, support: Support) -> WassersteinAmbiguity {
    WassersteinAmbiguity::new(theta, RiskLevel::new(eps).unwrap(), s, support).unwrap()
}

pub fn eps(e: f64) -> RiskLevel {
    RiskLevel::new(e).unwrap()
}
