//! Independent checks of a solution: exact worst-case oracles where one
//! exists and Gaussian sampling otherwise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySpec, Support};
use crate::linalg::{cholesky_lower, dot, lt_times, quad_form};
use crate::moments::MomentKind;
use crate::phi::risk_transform;
use crate::solution::DrccmdpSolution;
use crate::wasserstein::wasserstein_worst_case_prob;
use crate::{Error, Result};

/// Samples drawn from one random stream.
pub const BLOCK: usize = 4096;

/// Slack allowed on exact worst-case probabilities.
pub const ORACLE_TOL: f64 = 1e-6;

/// Fraction of `N(mu, Sigma)` draws `R` with `rho'R >= y`. Draws are split
/// into blocks of [`BLOCK`], block `b` using stream `b` of a ChaCha8
/// generator seeded with `seed`, so the result does not depend on the number
/// of threads.
pub fn monte_carlo_chance(
    rho: &[f64],
    y: f64,
    mu: &[f64],
    sigma: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if rho.len() != mu.len() {
        return Err(Error::dim("weight vector", mu.len(), rho.len()));
    }
    if n == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let l = cholesky_lower(sigma)?;
    // rho'(mu + L z) = m + w'z with w = L'rho
    let m = dot(rho, mu);
    let w = lt_times(&l, rho);
    let blocks = n.div_ceil(BLOCK);
    let hits: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = BLOCK.min(n - b * BLOCK);
            let mut count = 0;
            for _ in 0..len {
                let s: f64 = w
                    .iter()
                    .map(|wk| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        wk * z
                    })
                    .sum();
                if m + s >= y {
                    count += 1;
                }
            }
            count
        })
        .sum();
    Ok(hits as f64 / n as f64)
}

/// `sup P(rho'R <= y)` over all distributions with mean `mu` and covariance
/// `Sigma`: `v / (v + (m - y)^2)` with `m = mu'rho`, `v = rho'Sigma rho`.
/// At or above the mean the bound is not informative and the error carries
/// the conservative value 1.
pub fn cantelli_worst_case(rho: &[f64], y: f64, mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let m = dot(rho, mu);
    if m <= y {
        return Err(Error::Domain(format!(
            "level {y} is not below the mean reward {m}; worst case taken as 1"
        )));
    }
    let v = quad_form(sigma, rho);
    Ok(v / (v + (m - y) * (m - y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No exact check exists for this combination; nothing is claimed.
    Unsupported,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub epsilon: Option<f64>,
    pub y: f64,
    /// Which check produced `worst_case`.
    pub oracle: String,
    /// Exact worst-case violation probability, when an oracle exists.
    pub worst_case: Option<f64>,
    /// Threshold the checked probability is compared with.
    pub threshold: Option<f64>,
    /// Checked probability minus threshold; positive means violated.
    pub slack: Option<f64>,
    /// Violation frequency under the Gaussian with the given moments.
    pub empirical_violation: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub verdict: Verdict,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Checks `solution` against `spec`.
pub fn certify(
    solution: &DrccmdpSolution,
    spec: &AmbiguitySpec,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let rho = &solution.rho;
    let y = solution.y;
    if rho.len() != spec.dim() {
        return Err(Error::dim("solution length", spec.dim(), rho.len()));
    }
    let eps = spec.epsilon().map(|e| e.get());
    let mut report = ValidationReport {
        model: spec.name(),
        epsilon: eps,
        y,
        oracle: "none".into(),
        worst_case: None,
        threshold: eps,
        slack: None,
        empirical_violation: None,
        samples: 0,
        seed,
        verdict: Verdict::Unsupported,
        flags: Vec::new(),
    };
    let sample = |mu: &[f64], sigma: &DMatrix<f64>| -> Result<Option<f64>> {
        if samples == 0 {
            return Ok(None);
        }
        Ok(Some(
            1.0 - monte_carlo_chance(rho, y, mu, sigma, samples, seed)?,
        ))
    };
    let exact = |report: &mut ValidationReport, oracle: &str, wc: f64| {
        let e = eps.unwrap_or(0.0);
        report.oracle = oracle.into();
        report.worst_case = Some(wc);
        report.slack = Some(wc - e);
        report.verdict = if wc <= e + ORACLE_TOL {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
    };
    match spec {
        AmbiguitySpec::Nominal { .. } => {
            report
                .flags
                .push("nominal model has no chance constraint".into());
        }
        AmbiguitySpec::Gaussian { mu, sigma, .. } => {
            report.samples = samples;
            report.empirical_violation = sample(mu, sigma)?;
            judge_sampled(&mut report, eps.unwrap_or(0.0), samples, "monte-carlo");
        }
        AmbiguitySpec::Moments(a) => {
            report.samples = samples;
            report.empirical_violation = sample(&a.mu, &a.sigma)?;
            let scale = match a.kind {
                MomentKind::D1 => Some(1.0),
                MomentKind::D2 => Some(a.delta0),
                MomentKind::D3 => None,
            };
            match (scale, a.support) {
                (Some(s), Support::Full) => {
                    match cantelli_worst_case(rho, y, &a.mu, &(&a.sigma * s)) {
                        Ok(wc) => exact(&mut report, "cantelli", wc),
                        Err(_) => {
                            exact(&mut report, "cantelli", 1.0);
                            report
                                .flags
                                .push("level at or above the mean reward".into());
                        }
                    }
                }
                (Some(s), Support::Nonnegative) => {
                    report.oracle = "cantelli-upper-bound".into();
                    report.worst_case = cantelli_worst_case(rho, y, &a.mu, &(&a.sigma * s)).ok();
                    report.flags.push(
                        "nonnegative support has no exact oracle here; Cantelli only bounds the worst case from above"
                            .into(),
                    );
                }
                (None, _) => {
                    report
                        .flags
                        .push("no exact worst-case oracle for the mean-uncertainty set".into());
                }
            }
        }
        AmbiguitySpec::Phi(a) => {
            report.samples = samples;
            let f = risk_transform(a.divergence, a.theta, a.epsilon)?;
            report.empirical_violation = sample(&a.mu, &a.sigma)?;
            report
                .flags
                .push("nominal-only check: no exact worst case over the divergence ball".into());
            judge_sampled(&mut report, 1.0 - f, samples, "monte-carlo-nominal");
        }
        AmbiguitySpec::Wasserstein(a) => {
            let wc = wasserstein_worst_case_prob(rho, y, a)?;
            exact(&mut report, "wasserstein-breakpoint", wc);
        }
    }
    Ok(report)
}

/// Sampled check: violation frequency against `threshold` plus three
/// binomial standard deviations.
fn judge_sampled(report: &mut ValidationReport, threshold: f64, n: usize, oracle: &str) {
    report.oracle = oracle.into();
    report.threshold = Some(threshold);
    let Some(p) = report.empirical_violation else {
        report.flags.push("no samples requested".into());
        return;
    };
    let sd = (threshold * (1.0 - threshold) / n as f64).sqrt();
    report.slack = Some(p - threshold);
    report.verdict = if p <= threshold + 3.0 * sd + 1e-12 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
}
