//! Biconvex program for nonnegative support and its alternating convex
//! search.
//!
//! ```text
//! max y
//!   theta - (1/H) sum g_i <= l eps
//!   lambda_i (rho'xi_i - y) - zeta_i'xi_i >= l + g_i
//!   ||zeta_i - lambda_i rho|| <= 1
//!   lambda_i >= 0, zeta_i >= 0, l > 0, g_i <= 0, rho in Q
//! ```
//! For fixed `(rho, y)` each `(lambda_i, zeta_i)` block is the dual of the
//! distance from `xi_i` to `{z >= 0 : rho'z <= y}`. For fixed duals the rest
//! is an SOCP in `(y, rho, l, g)`.

use std::time::Instant;

use rayon::prelude::*;

use super::misocp::{solve_misocp_full, MisocpOptions};
use super::{nonneg_distance_dual, y_oracle, WassersteinAmbiguity};
use crate::ambiguity::Support;
use crate::conic::{
    solve_continuous, Cone, ConeProgram, LinExpr, Sense, SolveOptions, SolveStatus,
};
use crate::linalg::{dot, norm2};
use crate::mdp::OccupationPolytope;
use crate::moments::PolicyProgram;
use crate::{Error, Result};

/// Lower bound imposed on `l` in place of strict positivity.
pub const L_FLOOR: f64 = 1e-9;

/// How the per-scenario dual blocks are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualStep {
    /// Closed form from the exact orthant projection.
    Exact,
    /// One SOCP per scenario through the conic backend.
    Socp,
}

#[derive(Clone, Debug)]
pub struct AcsOptions {
    pub max_rounds: usize,
    /// Stop once a round improves `y` by less than this.
    pub tol: f64,
    pub dual_step: DualStep,
    /// Options of the full-support solve used as the starting point.
    pub init: MisocpOptions,
    pub solve: SolveOptions,
}

impl Default for AcsOptions {
    fn default() -> Self {
        Self {
            max_rounds: 200,
            tol: 1e-7,
            dual_step: DualStep::Exact,
            init: MisocpOptions::default(),
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AcsOutcome {
    pub y: f64,
    pub rho: Vec<f64>,
    pub rounds: usize,
    /// Oracle level after initialization and after every accepted round.
    pub y_history: Vec<f64>,
    pub converged: bool,
    /// Level of the full-support start under the full-support oracle.
    pub init_full_y: f64,
    pub init_status: SolveStatus,
    pub warnings: Vec<String>,
    /// The last primal-step program.
    pub program: Option<ConeProgram>,
    pub wall_s: f64,
}

/// Dual multipliers of one scenario.
pub type DualBlock = (f64, Vec<f64>);

pub struct BiconvexProgram<'a> {
    poly: &'a OccupationPolytope,
    a: &'a WassersteinAmbiguity,
}

impl<'a> BiconvexProgram<'a> {
    pub fn new(poly: &'a OccupationPolytope, a: &'a WassersteinAmbiguity) -> Result<Self> {
        if a.support != Support::Nonnegative {
            return Err(Error::Unsupported(
                "the biconvex program needs nonnegative support".into(),
            ));
        }
        if a.scenarios.dim() != poly.n_pairs() {
            return Err(Error::dim(
                "scenario length",
                poly.n_pairs(),
                a.scenarios.dim(),
            ));
        }
        Ok(Self { poly, a })
    }

    /// Optimal dual blocks for fixed `(rho, y)`.
    pub fn dual_step(
        &self,
        rho: &[f64],
        y: f64,
        mode: DualStep,
        opts: &SolveOptions,
    ) -> Result<Vec<DualBlock>> {
        let rho: Vec<f64> = rho.iter().map(|r| r.max(0.0)).collect();
        let rows = self.a.scenarios.rows();
        match mode {
            DualStep::Exact => rows
                .par_iter()
                .map(|xi| {
                    nonneg_distance_dual(xi, &rho, y).ok_or_else(|| {
                        Error::SolverFailure(format!("distance dual is unbounded at y = {y}"))
                    })
                })
                .collect(),
            DualStep::Socp => rows
                .par_iter()
                .map(|xi| dual_block_socp(xi, &rho, y, opts))
                .collect(),
        }
    }

    /// The primal-step SOCP for fixed dual blocks.
    pub fn primal_program(&self, duals: &[DualBlock]) -> Result<PolicyProgram> {
        let a = self.a;
        let h = a.h();
        if duals.len() != h {
            return Err(Error::dim("dual blocks", h, duals.len()));
        }
        let mut p = ConeProgram::new(Sense::Maximize);
        let y = p.add_var("y");
        let rho = self.poly.add_to(&mut p);
        let l = p.add_var("l");
        let g = p.add_vars("g", h);
        p.set_objective(LinExpr::var(y));
        let mut budget = LinExpr::term(l, a.epsilon.get()).plus(-a.theta);
        for &gi in &g {
            budget = budget.with(gi, 1.0 / h as f64);
        }
        p.add_ge0("(i) transport budget", budget);
        let mut margins = Vec::with_capacity(h);
        for (i, (lam, zeta)) in duals.iter().enumerate() {
            let xi = a.scenarios.row(i);
            let coef: Vec<f64> = xi.iter().map(|v| lam * v).collect();
            margins.push(
                LinExpr::dot(&rho, &coef)
                    .with(y, -lam)
                    .plus(-dot(zeta, xi))
                    .with(l, -1.0)
                    .with(g[i], -1.0),
            );
            if *lam > 0.0 {
                p.add_soc(
                    format!("(iii) dual norm {i}"),
                    LinExpr::constant(1.0),
                    rho.iter()
                        .zip(zeta)
                        .map(|(&r, &z)| LinExpr::constant(z).with(r, -lam))
                        .collect(),
                );
            } else if norm2(zeta) > 1.0 + 1e-9 {
                return Err(Error::MalformedProgram(format!(
                    "dual block {i} violates its norm bound"
                )));
            }
        }
        p.add("(ii) scenario margins", Cone::Nonneg, margins);
        let mut signs = vec![LinExpr::var(l).plus(-L_FLOOR)];
        signs.extend(g.iter().map(|&gi| LinExpr::term(gi, -1.0)));
        p.add_nonneg("(iv) signs", signs);
        Ok(PolicyProgram { program: p, y, rho })
    }
}

fn dual_block_socp(xi: &[f64], rho: &[f64], y: f64, opts: &SolveOptions) -> Result<DualBlock> {
    let n = xi.len();
    let mut p = ConeProgram::new(Sense::Maximize);
    let lam = p.add_var("lambda");
    let zeta = p.add_vars("zeta", n);
    p.set_objective(LinExpr::term(lam, dot(rho, xi) - y) - LinExpr::dot(&zeta, xi));
    p.add_soc(
        "||zeta - lambda rho|| <= 1",
        LinExpr::constant(1.0),
        (0..n)
            .map(|k| LinExpr::var(zeta[k]).with(lam, -rho[k]))
            .collect(),
    );
    let mut signs = vec![LinExpr::var(lam)];
    signs.extend(zeta.iter().map(|&z| LinExpr::var(z)));
    p.add_nonneg("signs", signs);
    let r = solve_continuous(&p, opts)?;
    match r.status {
        SolveStatus::Optimal => Ok((
            r.x[lam.0].max(0.0),
            zeta.iter().map(|v| r.x[v.0].max(0.0)).collect(),
        )),
        s => Err(Error::SolverFailure(format!("dual block ended with {s:?}"))),
    }
}

/// Alternating convex search started from the full-support solution on the
/// same scenarios. Each round takes the dual blocks at the current point,
/// maximizes `y` over the primal block, and then lifts `y` to the oracle
/// level of the new weights; a round that does not raise `y` is rejected.
pub fn solve_biconvex_acs(
    poly: &OccupationPolytope,
    a: &WassersteinAmbiguity,
    opts: &AcsOptions,
) -> Result<AcsOutcome> {
    let start = Instant::now();
    let prog = BiconvexProgram::new(poly, a)?;
    let full = WassersteinAmbiguity {
        support: Support::Full,
        ..a.clone()
    };
    let init = solve_misocp_full(poly, &full, &opts.init)?;
    let mut warnings = init.warnings.clone();
    let mut rho = init.rho.clone();
    let mut y = y_oracle(&rho, a)?;
    let mut history = vec![y];
    let mut converged = false;
    let mut rounds = 0;
    let mut last_program = None;
    while rounds < opts.max_rounds {
        rounds += 1;
        let duals = prog.dual_step(&rho, y, opts.dual_step, &opts.solve)?;
        let pp = prog.primal_program(&duals)?;
        let r = solve_continuous(&pp.program, &opts.solve)?;
        if r.status != SolveStatus::Optimal {
            let msg = format!("primal step ended with {:?} in round {rounds}", r.status);
            log::warn!("{msg}");
            warnings.push(msg);
            converged = true;
            break;
        }
        let (_, new_rho) = pp.extract(&r.x);
        last_program = Some(pp.program);
        let new_y = y_oracle(&new_rho, a)?;
        let gain = new_y - y;
        if gain < 0.0 {
            converged = true;
            break;
        }
        rho = new_rho;
        y = new_y;
        history.push(y);
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let msg = format!(
            "alternating search hit its round limit of {}",
            opts.max_rounds
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(AcsOutcome {
        y,
        rho,
        rounds,
        y_history: history,
        converged,
        init_full_y: init.y,
        init_status: init.status,
        warnings,
        program: last_program,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::RiskLevel;
    use crate::mdp::{build_occupation_polytope, tests::random_mdp};
    use crate::wasserstein::{nonneg_distance, ScenarioSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, h: usize) -> (OccupationPolytope, WassersteinAmbiguity) {
        let mdp = random_mdp(2, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..h)
            .map(|_| (0..4).map(|_| rng.gen_range(0.0..5.0)).collect())
            .collect();
        let a = WassersteinAmbiguity::new(
            0.05,
            RiskLevel::new(0.2).unwrap(),
            ScenarioSet::from_rows(rows).unwrap(),
            Support::Nonnegative,
        )
        .unwrap();
        (build_occupation_polytope(&mdp), a)
    }

    #[test]
    fn dual_routes_agree() {
        let (poly, a) = instance(1, 5);
        let prog = BiconvexProgram::new(&poly, &a).unwrap();
        let rho = [0.3, 0.2, 0.1, 0.4];
        let y = 1.0;
        let opts = SolveOptions::default();
        let exact = prog.dual_step(&rho, y, DualStep::Exact, &opts).unwrap();
        let socp = prog.dual_step(&rho, y, DualStep::Socp, &opts).unwrap();
        for (i, (e, s)) in exact.iter().zip(&socp).enumerate() {
            let xi = a.scenarios.row(i);
            let val = |b: &DualBlock| b.0 * (dot(&rho, xi) - y) - dot(&b.1, xi);
            let d = nonneg_distance(xi, &rho, y);
            assert!((val(e) - d).abs() < 1e-9);
            assert!((val(s) - d).abs() < 1e-6, "{} vs {d}", val(s));
        }
    }

    #[test]
    fn sequence_is_nondecreasing() {
        for seed in 0..3 {
            let (poly, a) = instance(seed, 6);
            let out = solve_biconvex_acs(&poly, &a, &AcsOptions::default()).unwrap();
            assert!(out.y_history.windows(2).all(|w| w[1] >= w[0] - 1e-9));
            assert!(out.y >= out.init_full_y - 1e-9);
        }
    }
}
