//! Solver entry point and the solution record shared by every ambiguity set.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySpec, Support};
use crate::conic::{
    solve_continuous, BnbOptions, ConeProgram, LinExpr, Sense, SolveOptions, SolveStatus,
};
use crate::linalg::cholesky_lower;
use crate::mdp::{build_occupation_polytope, extract_policy, MdpModel, StationaryPolicy};
use crate::moments::{
    build_full_support_socp, kappa_for, kappa_socp, solve_moments_nonnegative, LambdaSearch,
    PolicyProgram,
};
use crate::phi::{build_phi_socp, normal_quantile, risk_transform};
use crate::wasserstein::{solve_biconvex_acs, solve_misocp_full, AcsOptions, MisocpOptions};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionStatus {
    /// Solved to optimality by a convex program or a certified search.
    Optimal,
    /// Feasible and checked, but optimality is not certified (search budget
    /// exhausted, local method, or 1-D search over a multiplier).
    Feasible,
    /// The alternating search hit its round limit.
    Stalled,
}

impl SolutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionStatus::Optimal => "optimal",
            SolutionStatus::Feasible => "feasible",
            SolutionStatus::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub wall_ms: f64,
    pub iterations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_transform: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_evaluations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heuristic_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Optimal reward level, occupation measure and the induced policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DrccmdpSolution {
    pub model: String,
    pub status: SolutionStatus,
    pub y: f64,
    pub rho: Vec<f64>,
    pub policy: StationaryPolicy,
    pub labels: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl DrccmdpSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Probability of action `a` in state `s`.
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.policy.probs[s][a]
    }
}

/// Budgets and switches of the non-convex solve paths.
#[derive(Clone, Debug, Default)]
pub struct SolverConfig {
    pub solve: SolveOptions,
    pub lambda: LambdaSearch,
    pub misocp: MisocpOptions,
    pub acs: AcsOptions,
}

impl SolverConfig {
    /// Caps branch-and-bound (also inside the alternating search start).
    pub fn with_bnb_time_limit(mut self, seconds: f64) -> Self {
        self.misocp.bnb.time_limit_s = Some(seconds);
        self.acs.init.bnb.time_limit_s = Some(seconds);
        self
    }

    pub fn with_bnb(mut self, bnb: BnbOptions) -> Self {
        self.misocp.bnb = bnb.clone();
        self.acs.init.bnb = bnb;
        self
    }
}

/// Solution together with the last conic program that produced it.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub solution: DrccmdpSolution,
    pub program: Option<ConeProgram>,
}

fn solve_policy_program(
    pp: &PolicyProgram,
    opts: &SolveOptions,
) -> Result<(f64, Vec<f64>, u64, Option<f64>)> {
    let r = solve_continuous(&pp.program, opts)?;
    match r.status {
        SolveStatus::Optimal => {
            let (y, rho) = pp.extract(&r.x);
            Ok((y, rho, r.iterations as u64, r.bound))
        }
        SolveStatus::Infeasible => Err(Error::Infeasible("conic program is infeasible".into())),
        s => Err(Error::SolverFailure(format!(
            "conic program ended with {s:?}"
        ))),
    }
}

/// Solves the distributionally robust chance-constrained MDP for one
/// ambiguity set.
pub fn solve(mdp: &MdpModel, spec: &AmbiguitySpec, cfg: &SolverConfig) -> Result<SolveOutput> {
    let start = Instant::now();
    let n = mdp.n_pairs();
    if spec.dim() != n {
        return Err(Error::dim("ambiguity dimension", n, spec.dim()));
    }
    let poly = build_occupation_polytope(mdp);
    let mut diag = Diagnostics::default();
    let mut status = SolutionStatus::Optimal;
    let (y, rho, program) = match spec {
        AmbiguitySpec::Nominal { mu } => {
            let mut p = ConeProgram::new(Sense::Maximize);
            let rho = poly.add_to(&mut p);
            p.set_objective(LinExpr::dot(&rho, mu));
            let y = p.add_var("y");
            p.add_eq("y = mu'rho", LinExpr::dot(&rho, mu).with(y, -1.0));
            let pp = PolicyProgram { program: p, y, rho };
            let (y, rho, it, b) = solve_policy_program(&pp, &cfg.solve)?;
            diag.iterations = it;
            diag.dual_bound = b;
            (y, rho, Some(pp.program))
        }
        AmbiguitySpec::Gaussian { mu, sigma, epsilon } => {
            let kappa = normal_quantile(1.0 - epsilon.get())?;
            let pp = kappa_socp(&poly, mu, &cholesky_lower(sigma)?, kappa)?;
            let (y, rho, it, b) = solve_policy_program(&pp, &cfg.solve)?;
            diag.kappa = Some(kappa);
            diag.iterations = it;
            diag.dual_bound = b;
            (y, rho, Some(pp.program))
        }
        AmbiguitySpec::Moments(a) => match a.support {
            Support::Full => {
                let pp = build_full_support_socp(&poly, a)?;
                let (y, rho, it, b) = solve_policy_program(&pp, &cfg.solve)?;
                diag.kappa = Some(kappa_for(a));
                diag.iterations = it;
                diag.dual_bound = b;
                (y, rho, Some(pp.program))
            }
            Support::Nonnegative => {
                let out = solve_moments_nonnegative(&poly, a, &cfg.lambda)?;
                status = SolutionStatus::Feasible;
                diag.lambda = Some(out.lambda);
                diag.lambda_evaluations = Some(out.evaluations);
                diag.iterations = out.iterations;
                diag.warnings = out.warnings;
                (out.y, out.rho, Some(out.program))
            }
        },
        AmbiguitySpec::Phi(a) => {
            let pp = build_phi_socp(&poly, a)?;
            let (y, rho, it, b) = solve_policy_program(&pp, &cfg.solve)?;
            diag.risk_transform = Some(risk_transform(a.divergence, a.theta, a.epsilon)?);
            diag.kappa = Some(a.kappa()?);
            diag.iterations = it;
            diag.dual_bound = b;
            (y, rho, Some(pp.program))
        }
        AmbiguitySpec::Wasserstein(a) => match a.support {
            Support::Full => {
                let out = solve_misocp_full(&poly, a, &cfg.misocp)?;
                if out.status != SolveStatus::Optimal {
                    status = SolutionStatus::Feasible;
                }
                diag.nodes = Some(out.nodes);
                diag.dual_bound = out.bound;
                diag.program_y = Some(out.program_y);
                diag.heuristic_y = out.heuristic_y;
                diag.big_m = Some(out.big_m);
                diag.iterations = out.iterations;
                diag.warnings = out.warnings;
                (out.y, out.rho, Some(out.program))
            }
            Support::Nonnegative => {
                let out = solve_biconvex_acs(&poly, a, &cfg.acs)?;
                status = if out.converged {
                    SolutionStatus::Feasible
                } else {
                    SolutionStatus::Stalled
                };
                diag.rounds = Some(out.rounds);
                diag.program_y = Some(out.init_full_y);
                diag.y_history = out.y_history;
                diag.warnings = out.warnings;
                (out.y, out.rho, out.program)
            }
        },
    };
    diag.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let policy = extract_policy(mdp, &rho);
    Ok(SolveOutput {
        solution: DrccmdpSolution {
            model: spec.name(),
            status,
            y,
            rho,
            policy,
            labels: mdp.pair_labels(),
            diagnostics: diag,
        },
        program,
    })
}
