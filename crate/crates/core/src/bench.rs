//! Machine-replacement instances and the experiment runner.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySpec, RiskLevel, Support};
use crate::linalg::{cholesky_lower, l_times};
use crate::mdp::MdpModel;
use crate::moments::{MomentAmbiguity, MomentKind};
use crate::phi::{Divergence, PhiAmbiguity};
use crate::solution::{solve, DrccmdpSolution, SolverConfig};
use crate::wasserstein::{Provenance, ScenarioSet, WassersteinAmbiguity};
use crate::{Error, Result};

pub const REPAIR: &str = "repair";
pub const KEEP: &str = "no-repair";

/// Probability that a repaired machine is as good as new.
pub const REPAIR_SUCCESS: f64 = 0.9;

/// Stream of the seeded generator used for the covariance factor `A`.
const STREAM_COVARIANCE: u64 = 0;
/// Stream used for scenario draws.
const STREAM_SCENARIOS: u64 = 1;

#[derive(Clone, Debug)]
pub struct MachineReplacementInstance {
    pub n_states: usize,
    pub fixed_cost: f64,
    pub revenue: Vec<f64>,
    pub cost_mean: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub mdp: MdpModel,
    pub seed: u64,
}

/// Builds the `n`-state instance. Pairs are flattened state-major with
/// `repair` first. Revenues and mean costs follow the affine patterns of the
/// 10-state table. `Sigma = A A' / |K| + D` with `A` uniform on `[0, 1]` and
/// `D` the identity except 4 at (last, repair) and 9 at (last, no-repair).
///
/// Transitions: repairing returns the machine to state 0 with probability
/// 0.9 and leaves it in place otherwise; not repairing ages it by one state,
/// the last state being absorbing.
pub fn generate_instance(n_states: usize, seed: u64) -> Result<MachineReplacementInstance> {
    if n_states < 2 {
        return Err(Error::Domain(format!(
            "need at least two states, got {n_states}"
        )));
    }
    let n = n_states;
    let k = 2 * n;
    let fixed_cost = 10.0;
    let mut revenue = Vec::with_capacity(k);
    let mut cost_mean = Vec::with_capacity(k);
    for s in 0..n {
        revenue.push(30.0);
        revenue.push(30.0 - 0.1 * s as f64);
        cost_mean.push(10.0 + 0.1 * s as f64);
        cost_mean.push(if s + 1 == n { 5.0 } else { 0.0 });
    }
    let mu: Vec<f64> = (0..k)
        .map(|i| revenue[i] - fixed_cost - cost_mean[i])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_COVARIANCE);
    let a = DMatrix::<f64>::from_fn(k, k, |_, _| rng.gen::<f64>());
    let mut sigma = &a * a.transpose() / k as f64;
    for i in 0..k {
        sigma[(i, i)] += 1.0;
    }
    sigma[(k - 2, k - 2)] += 3.0;
    sigma[(k - 1, k - 1)] += 8.0;
    if cholesky_lower(&sigma).is_err() {
        for i in 0..k {
            sigma[(i, i)] += 1e-3;
        }
    }

    let actions = vec![vec![REPAIR.to_string(), KEEP.to_string()]; n];
    let mut kernel = Vec::with_capacity(k);
    for s in 0..n {
        kernel.push(if s == 0 {
            vec![(0, 1.0)]
        } else {
            vec![(0, REPAIR_SUCCESS), (s, 1.0 - REPAIR_SUCCESS)]
        });
        kernel.push(vec![((s + 1).min(n - 1), 1.0)]);
    }
    let mdp = MdpModel::from_kernel(actions, kernel, 0.85, vec![1.0 / n as f64; n])?;
    Ok(MachineReplacementInstance {
        n_states,
        fixed_cost,
        revenue,
        cost_mean,
        mu,
        sigma,
        mdp,
        seed,
    })
}

impl MachineReplacementInstance {
    /// Same instance with a different discount factor.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        let j = self.mdp.to_json();
        self.mdp = MdpModel::new(j.actions, &j.transition, alpha, j.gamma)?;
        Ok(self)
    }
}

/// `xi_i = B x_i + mu` with `B` the Cholesky factor of `Sigma` and `x_i`
/// standard normal.
pub fn generate_scenarios(
    inst: &MachineReplacementInstance,
    h: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if h == 0 {
        return Err(Error::Domain("need at least one scenario".into()));
    }
    let b = cholesky_lower(&inst.sigma)?;
    let k = inst.mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SCENARIOS);
    let rows = (0..h)
        .map(|_| {
            let x: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            l_times(&b, &x)
                .iter()
                .zip(&inst.mu)
                .map(|(a, m)| a + m)
                .collect()
        })
        .collect();
    let mut s = ScenarioSet::new(rows, inst.mdp.pair_labels())?;
    s.provenance = Some(Provenance {
        generator: "machine-replacement-gaussian".into(),
        seed,
    });
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchModel {
    Nominal,
    Gaussian,
    D1,
    D2,
    D3,
    D1Nonneg,
    D2Nonneg,
    D3Nonneg,
    Kl,
    Variation,
    ModifiedChi2,
    Hellinger,
    WassersteinFull,
    WassersteinNonneg,
}

impl BenchModel {
    pub const ALL: [BenchModel; 14] = [
        BenchModel::Nominal,
        BenchModel::Gaussian,
        BenchModel::D1,
        BenchModel::D2,
        BenchModel::D3,
        BenchModel::D1Nonneg,
        BenchModel::D2Nonneg,
        BenchModel::D3Nonneg,
        BenchModel::Kl,
        BenchModel::Variation,
        BenchModel::ModifiedChi2,
        BenchModel::Hellinger,
        BenchModel::WassersteinFull,
        BenchModel::WassersteinNonneg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchModel::Nominal => "nominal",
            BenchModel::Gaussian => "gaussian",
            BenchModel::D1 => "d1",
            BenchModel::D2 => "d2",
            BenchModel::D3 => "d3",
            BenchModel::D1Nonneg => "d1-nonneg",
            BenchModel::D2Nonneg => "d2-nonneg",
            BenchModel::D3Nonneg => "d3-nonneg",
            BenchModel::Kl => "kl",
            BenchModel::Variation => "var",
            BenchModel::ModifiedChi2 => "mchi2",
            BenchModel::Hellinger => "hellinger",
            BenchModel::WassersteinFull => "w-full",
            BenchModel::WassersteinNonneg => "w-nonneg",
        }
    }

    fn needs_scenarios(self) -> bool {
        matches!(
            self,
            BenchModel::WassersteinFull | BenchModel::WassersteinNonneg
        )
    }
}

impl FromStr for BenchModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        BenchModel::ALL
            .into_iter()
            .find(|m| m.name() == t)
            .or(match t.as_str() {
                "variation" => Some(BenchModel::Variation),
                "modified_chi2" => Some(BenchModel::ModifiedChi2),
                "kullback_leibler" => Some(BenchModel::Kl),
                _ => None,
            })
            .ok_or_else(|| Error::Domain(format!("unknown model '{s}'")))
    }
}

/// Parses a comma-separated model list.
pub fn parse_models(list: &str) -> Result<Vec<BenchModel>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(BenchModel::from_str)
        .collect()
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub n_states: usize,
    pub seed: u64,
    pub models: Vec<BenchModel>,
    pub epsilon: f64,
    pub alpha: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub theta_phi: f64,
    pub theta_w: f64,
    pub h: usize,
    pub solver: SolverConfig,
}

impl BenchConfig {
    /// Reference parameters; branch-and-bound is capped by nodes rather than
    /// wall time so repeated runs give identical results.
    pub fn new(n_states: usize, seed: u64) -> Self {
        let mut solver = SolverConfig::default();
        solver.misocp.bnb.node_limit = 200;
        solver.acs.init.bnb.node_limit = 200;
        Self {
            n_states,
            seed,
            models: BenchModel::ALL.to_vec(),
            epsilon: 0.1,
            alpha: 0.85,
            delta0: 0.9,
            delta1: 1.0,
            delta2: 1.0,
            theta_phi: 0.01,
            theta_w: 0.01,
            h: 1000,
            solver,
        }
    }
}

/// Builds the ambiguity set of `model` on an instance.
pub fn model_spec(
    model: BenchModel,
    cfg: &BenchConfig,
    inst: &MachineReplacementInstance,
    scenarios: Option<&ScenarioSet>,
) -> Result<AmbiguitySpec> {
    let eps = RiskLevel::new(cfg.epsilon)?;
    let mu = inst.mu.clone();
    let sigma = inst.sigma.clone();
    let moments = |kind, support| {
        MomentAmbiguity::new(
            kind,
            mu.clone(),
            sigma.clone(),
            cfg.delta0,
            cfg.delta1,
            cfg.delta2,
            support,
            eps,
        )
    };
    let phi = |d| PhiAmbiguity::new(d, cfg.theta_phi, eps, mu.clone(), sigma.clone());
    let wass = |support| -> Result<AmbiguitySpec> {
        let s =
            scenarios.ok_or_else(|| Error::InvalidModel("scenarios were not generated".into()))?;
        let s = if support == Support::Nonnegative {
            s.clipped_to_orthant()
        } else {
            s.clone()
        };
        Ok(AmbiguitySpec::Wasserstein(WassersteinAmbiguity::new(
            cfg.theta_w,
            eps,
            s,
            support,
        )?))
    };
    Ok(match model {
        BenchModel::Nominal => AmbiguitySpec::Nominal { mu },
        BenchModel::Gaussian => AmbiguitySpec::Gaussian {
            mu,
            sigma,
            epsilon: eps,
        },
        BenchModel::D1 => AmbiguitySpec::Moments(moments(MomentKind::D1, Support::Full)?),
        BenchModel::D2 => AmbiguitySpec::Moments(moments(MomentKind::D2, Support::Full)?),
        BenchModel::D3 => AmbiguitySpec::Moments(moments(MomentKind::D3, Support::Full)?),
        BenchModel::D1Nonneg => {
            AmbiguitySpec::Moments(moments(MomentKind::D1, Support::Nonnegative)?)
        }
        BenchModel::D2Nonneg => {
            AmbiguitySpec::Moments(moments(MomentKind::D2, Support::Nonnegative)?)
        }
        BenchModel::D3Nonneg => {
            AmbiguitySpec::Moments(moments(MomentKind::D3, Support::Nonnegative)?)
        }
        BenchModel::Kl => AmbiguitySpec::Phi(phi(Divergence::KullbackLeibler)?),
        BenchModel::Variation => AmbiguitySpec::Phi(phi(Divergence::Variation)?),
        BenchModel::ModifiedChi2 => AmbiguitySpec::Phi(phi(Divergence::ModifiedChi2)?),
        BenchModel::Hellinger => AmbiguitySpec::Phi(phi(Divergence::Hellinger)?),
        BenchModel::WassersteinFull => wass(Support::Full)?,
        BenchModel::WassersteinNonneg => wass(Support::Nonnegative)?,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub y: Option<f64>,
    /// Action probabilities in flattened pair order.
    pub probs: Vec<f64>,
    pub wall_ms: f64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<DrccmdpSolution>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchResults {
    pub n_states: usize,
    pub seed: u64,
    pub labels: Vec<String>,
    pub scenarios: Option<usize>,
    pub clipped_entries: Option<usize>,
    pub rows: Vec<BenchRow>,
}

/// Outcome of a whole run plus the generated data.
pub struct BenchRun {
    pub results: BenchResults,
    pub instance: MachineReplacementInstance,
    pub scenarios: Option<ScenarioSet>,
}

fn error_status(e: &Error) -> &'static str {
    if e.is_infeasible() {
        "infeasible"
    } else if e.is_bad_input() {
        "bad-input"
    } else {
        "solver-failure"
    }
}

/// Solves every configured model in order. A failing model is recorded and
/// the run continues.
pub fn run_experiment(cfg: &BenchConfig) -> Result<BenchRun> {
    let instance = generate_instance(cfg.n_states, cfg.seed)?.with_alpha(cfg.alpha)?;
    let scenarios = if cfg.models.iter().any(|m| m.needs_scenarios()) {
        Some(generate_scenarios(&instance, cfg.h, cfg.seed)?)
    } else {
        None
    };
    let clipped_entries = scenarios.as_ref().map(|s| s.clipped_to_orthant().clipped);
    let labels = instance.mdp.pair_labels();
    let mut rows = Vec::with_capacity(cfg.models.len());
    for &model in &cfg.models {
        let start = Instant::now();
        let outcome = model_spec(model, cfg, &instance, scenarios.as_ref())
            .and_then(|spec| solve(&instance.mdp, &spec, &cfg.solver));
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let row = match outcome {
            Ok(out) => {
                let s = out.solution;
                log::info!("{}: y = {:.6} ({:.0} ms)", model.name(), s.y, wall_ms);
                BenchRow {
                    model: model.name().into(),
                    y: Some(s.y),
                    probs: s.policy.flat(),
                    wall_ms,
                    status: s.status.as_str().into(),
                    error: None,
                    solution: Some(s),
                }
            }
            Err(e) => {
                log::warn!("{} failed: {e}", model.name());
                BenchRow {
                    model: model.name().into(),
                    y: None,
                    probs: Vec::new(),
                    wall_ms,
                    status: error_status(&e).into(),
                    error: Some(e.to_string()),
                    solution: None,
                }
            }
        };
        rows.push(row);
    }
    Ok(BenchRun {
        results: BenchResults {
            n_states: cfg.n_states,
            seed: cfg.seed,
            labels,
            scenarios: scenarios.as_ref().map(ScenarioSet::len),
            clipped_entries,
            rows,
        },
        instance,
        scenarios,
    })
}

/// CSV with columns `model, y, <one per pair>, wall_ms, status`.
pub fn results_csv(r: &BenchResults) -> String {
    let mut out = String::new();
    out.push_str("model,y");
    for l in &r.labels {
        let _ = write!(out, ",{l}");
    }
    out.push_str(",wall_ms,status\n");
    for row in &r.rows {
        out.push_str(&row.model);
        out.push(',');
        if let Some(y) = row.y {
            let _ = write!(out, "{y:.9}");
        }
        for i in 0..r.labels.len() {
            out.push(',');
            if let Some(p) = row.probs.get(i) {
                let _ = write!(out, "{p:.9}");
            }
        }
        let _ = writeln!(out, ",{:.1},{}", row.wall_ms, row.status);
    }
    out
}

/// Writes `results.csv`, `results.json`, `mdp.json` and, when generated,
/// `scenarios.csv` into `dir`.
pub fn write_outputs(run: &BenchRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(&run.results))?;
    std::fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(&run.results)?,
    )?;
    std::fs::write(
        dir.join("mdp.json"),
        serde_json::to_string_pretty(&run.instance.mdp.to_json())?,
    )?;
    if let Some(s) = &run.scenarios {
        s.write_csv(&dir.join("scenarios.csv"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_state_table_values() {
        let inst = generate_instance(10, 1).unwrap();
        // state 1 no-repair and state 10 repair in one-based terms
        assert!((inst.mu[1] - 20.0).abs() < 1e-12);
        assert!((inst.mu[18] - 9.1).abs() < 1e-12);
        assert!((inst.mu[19] - (29.1 - 10.0 - 5.0)).abs() < 1e-12);
        assert_eq!(inst.mdp.n_pairs(), 20);
        assert_eq!(inst.mdp.pair_labels()[19], "s9:no-repair");
    }

    #[test]
    fn covariance_is_positive_definite() {
        for seed in 0..50 {
            let inst = generate_instance(10, seed).unwrap();
            assert!(cholesky_lower(&inst.sigma).is_ok());
            assert!(inst.sigma[(19, 19)] >= 9.0 && inst.sigma[(18, 18)] >= 4.0);
        }
    }

    #[test]
    fn scenarios_are_reproducible_and_centered() {
        let inst = generate_instance(3, 4).unwrap();
        let a = generate_scenarios(&inst, 4000, 9).unwrap();
        let b = generate_scenarios(&inst, 4000, 9).unwrap();
        assert_eq!(a.rows(), b.rows());
        for (i, m) in a.mean().iter().enumerate() {
            let sd = inst.sigma[(i, i)].sqrt();
            assert!((m - inst.mu[i]).abs() < 4.0 * sd / (4000f64).sqrt());
        }
    }

    #[test]
    fn model_names_round_trip() {
        for m in BenchModel::ALL {
            assert_eq!(m.name().parse::<BenchModel>().unwrap(), m);
        }
        assert!(parse_models("d1,foo").is_err());
    }

    #[test]
    fn failing_model_does_not_stop_the_run() {
        let mut cfg = BenchConfig::new(3, 2);
        cfg.models = vec![BenchModel::Variation, BenchModel::D1];
        cfg.theta_phi = 0.5; // f >= 1: no finite quantile
        let run = run_experiment(&cfg).unwrap();
        assert_eq!(run.results.rows[0].status, "infeasible");
        assert_eq!(run.results.rows[1].status, "optimal");
        let csv = results_csv(&run.results);
        assert!(csv.starts_with("model,y,s0:repair,s0:no-repair"));
    }
}
