//! Big-M mixed-binary SOCP for full support, with a pattern heuristic that
//! seeds branch-and-bound.

use std::time::Instant;

use rayon::prelude::*;

use super::{big_m, y_oracle, WassersteinAmbiguity};
use crate::ambiguity::Support;
use crate::conic::{
    relaxation, solve_continuous, solve_misocp, solve_with_fixings, BnbOptions, ConeProgram,
    LinExpr, Sense, SolveOptions, SolveStatus, Var,
};
use crate::linalg::{dot, norm2};
use crate::mdp::OccupationPolytope;
use crate::moments::kappa_socp;
use crate::phi::normal_quantile;
use crate::{Error, Result};

/// Lower bound imposed on `beta` in place of strict positivity.
pub const BETA_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct MisocpHandles {
    pub y: Var,
    pub rho: Vec<Var>,
    pub beta: Var,
    pub t: Var,
    pub b: Vec<Var>,
    pub eta: Vec<Var>,
    pub big_m: f64,
}

impl MisocpHandles {
    pub fn rho_of(&self, x: &[f64]) -> Vec<f64> {
        self.rho.iter().map(|v| x[v.0]).collect()
    }
}

/// Builds
/// ```text
/// max y
///   beta theta - (1/H) sum b_i <= t eps
///   M eta_i >= b_i + t
///   M (1 - eta_i) + rho'xi_i - y >= b_i + t
///   ||rho|| <= beta, beta >= 1e-9, t >= 0, b_i <= 0, eta_i binary
///   y + (theta/eps) beta >= min_{i,k} xi_ik
/// ```
/// The last row is implied by `y >= min_i rho'xi_i - (theta/eps)||rho||`
/// whenever `rho` sums to one, which every occupation measure does; unlike
/// that row it is convex.
pub fn build_misocp(
    poly: &OccupationPolytope,
    a: &WassersteinAmbiguity,
) -> Result<(ConeProgram, MisocpHandles)> {
    if a.support != Support::Full {
        return Err(Error::Unsupported(
            "the big-M program needs full support".into(),
        ));
    }
    let n = poly.n_pairs();
    if a.scenarios.dim() != n {
        return Err(Error::dim("scenario length", n, a.scenarios.dim()));
    }
    let h = a.h();
    let m = big_m(a);
    let eps = a.epsilon.get();
    let mut p = ConeProgram::new(Sense::Maximize);
    let y = p.add_var("y");
    let rho = poly.add_to(&mut p);
    let beta = p.add_var("beta");
    let t = p.add_var("t");
    let b = p.add_vars("b", h);
    let eta = p.add_vars("eta", h);
    for &e in &eta {
        p.mark_binary(e);
    }
    p.set_objective(LinExpr::var(y));

    let mut budget = LinExpr::term(t, eps).with(beta, -a.theta);
    for &bi in &b {
        budget = budget.with(bi, 1.0 / h as f64);
    }
    p.add_ge0("(i) transport budget", budget);
    p.add_nonneg(
        "(ii) active scenarios",
        (0..h)
            .map(|i| LinExpr::term(eta[i], m).with(b[i], -1.0).with(t, -1.0))
            .collect(),
    );
    p.add_nonneg(
        "(iii) scenario margins",
        (0..h)
            .map(|i| {
                LinExpr::dot(&rho, a.scenarios.row(i))
                    .plus(m)
                    .with(eta[i], -m)
                    .with(y, -1.0)
                    .with(b[i], -1.0)
                    .with(t, -1.0)
            })
            .collect(),
    );
    p.add_soc(
        "(v) ||rho|| <= beta",
        LinExpr::var(beta),
        rho.iter().map(|&v| LinExpr::var(v)).collect(),
    );
    let mut signs = vec![LinExpr::var(beta).plus(-BETA_FLOOR), LinExpr::var(t)];
    signs.extend(b.iter().map(|&bi| LinExpr::term(bi, -1.0)));
    p.add_nonneg("(v) signs", signs);
    p.add_ge0(
        "lower bound on y",
        LinExpr::var(y)
            .with(beta, a.theta / eps)
            .plus(-a.scenarios.min_entry()),
    );
    Ok((
        p,
        MisocpHandles {
            y,
            rho,
            beta,
            t,
            b,
            eta,
            big_m: m,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct MisocpOptions {
    pub bnb: BnbOptions,
    /// Run the pattern heuristic and pass its point to branch-and-bound.
    pub heuristic: bool,
    /// Scenarios closest to the level that single flips are tried on.
    pub flip_candidates: usize,
    pub max_pattern_rounds: usize,
}

impl Default for MisocpOptions {
    fn default() -> Self {
        Self {
            bnb: BnbOptions::default(),
            heuristic: true,
            flip_candidates: 16,
            max_pattern_rounds: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MisocpOutcome {
    /// Oracle level of the returned weights, never below the program value.
    pub y: f64,
    pub rho: Vec<f64>,
    /// Objective of the mixed-binary program at the returned point.
    pub program_y: f64,
    pub heuristic_y: Option<f64>,
    pub status: SolveStatus,
    pub bound: Option<f64>,
    pub nodes: usize,
    pub iterations: u64,
    pub bound_history: Vec<f64>,
    pub big_m: f64,
    /// `M >= |y - rho'xi_i|` for every scenario at the returned point.
    pub big_m_valid: bool,
    pub warnings: Vec<String>,
    pub program: ConeProgram,
    pub x: Vec<f64>,
}

/// `eta_i = 1` exactly for scenarios with `rho'xi_i >= y`.
fn pattern_of(a: &WassersteinAmbiguity, rho: &[f64], y: f64) -> Vec<f64> {
    a.scenarios
        .rows()
        .iter()
        .map(|xi| if dot(rho, xi) >= y { 1.0 } else { 0.0 })
        .collect()
}

fn solve_pattern(
    p: &ConeProgram,
    h: &MisocpHandles,
    eta: &[f64],
    opts: &SolveOptions,
) -> Option<(f64, Vec<f64>)> {
    let fix: Vec<(usize, f64)> = h.eta.iter().zip(eta).map(|(v, &e)| (v.0, e)).collect();
    match solve_with_fixings(p, &fix, opts) {
        Ok(r) if r.status == SolveStatus::Optimal => {
            let mut x = r.x;
            for &(j, v) in &fix {
                x[j] = v;
            }
            Some((r.objective, x))
        }
        Ok(r) => {
            log::debug!("pattern program ended with {:?}", r.status);
            None
        }
        Err(e) => {
            log::debug!("pattern program failed: {e}");
            None
        }
    }
}

/// Alternates between the scenario pattern induced by the oracle level of the
/// current weights and the SOCP with that pattern fixed, then tries single
/// flips of scenarios close to the level. Every fixed-pattern program
/// contains the current oracle point, so the value never decreases. Stops
/// starting new programs once `deadline` has passed.
fn pattern_heuristic(
    poly: &OccupationPolytope,
    a: &WassersteinAmbiguity,
    p: &ConeProgram,
    h: &MisocpHandles,
    opts: &MisocpOptions,
    deadline: Option<Instant>,
) -> Result<Option<(f64, Vec<f64>)>> {
    let expired = || deadline.is_some_and(|d| Instant::now() >= d);
    // every solve is also capped by the time left to the deadline
    let capped = || {
        let mut o = opts.bnb.solve.clone();
        if let Some(d) = deadline {
            let left = d
                .saturating_duration_since(Instant::now())
                .as_secs_f64()
                .max(1e-3);
            o.time_limit_s = Some(o.time_limit_s.map_or(left, |t| t.min(left)));
        }
        o
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let root = solve_continuous(&relaxation(p), &capped())?;
    if root.status == SolveStatus::Optimal {
        starts.push(h.rho_of(&root.x));
    }
    // Gaussian fit of the scenarios as a second start
    let kappa = normal_quantile(1.0 - a.epsilon.get())?;
    let cov = a.scenarios.covariance()
        + nalgebra::DMatrix::identity(poly.n_pairs(), poly.n_pairs()) * 1e-8;
    if expired() {
        return Ok(None);
    }
    if let Ok(chol) = crate::linalg::cholesky_lower(&cov) {
        let g = kappa_socp(poly, &a.scenarios.mean(), &chol, kappa)?;
        let r = solve_continuous(&g.program, &capped())?;
        if r.status == SolveStatus::Optimal {
            starts.push(g.rho.iter().map(|v| r.x[v.0]).collect());
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let improve = |best: &mut Option<(f64, Vec<f64>)>, cand: (f64, Vec<f64>)| -> bool {
        if best
            .as_ref()
            .map_or(true, |b| cand.0 > b.0 + 1e-9 * (1.0 + b.0.abs()))
        {
            *best = Some(cand);
            true
        } else {
            false
        }
    };

    let descend = |mut rho: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| -> Result<()> {
        for _ in 0..opts.max_pattern_rounds {
            if norm2(&rho) == 0.0 || expired() {
                break;
            }
            let y = y_oracle(&rho, a)?;
            let eta = pattern_of(a, &rho, y);
            let Some((val, x)) = solve_pattern(p, h, &eta, &capped()) else {
                break;
            };
            if !improve(best, (val, x.clone())) {
                break;
            }
            rho = h.rho_of(&x);
        }
        Ok(())
    };

    for s in starts {
        descend(s, &mut best)?;
    }

    for _ in 0..opts.max_pattern_rounds {
        if expired() {
            break;
        }
        let Some((cur, x)) = best.clone() else {
            break;
        };
        let rho = h.rho_of(&x);
        let y = x[h.y.0];
        let eta: Vec<f64> = h.eta.iter().map(|v| x[v.0].round()).collect();
        let mut order: Vec<usize> = (0..a.h()).collect();
        order.sort_by(|&i, &j| {
            let di = (dot(&rho, a.scenarios.row(i)) - y).abs();
            let dj = (dot(&rho, a.scenarios.row(j)) - y).abs();
            di.total_cmp(&dj).then(i.cmp(&j))
        });
        order.truncate(opts.flip_candidates);
        let flips: Vec<(f64, Vec<f64>)> = order
            .par_iter()
            .filter_map(|&i| {
                if expired() {
                    return None;
                }
                let mut e = eta.clone();
                e[i] = 1.0 - e[i];
                solve_pattern(p, h, &e, &capped())
            })
            .collect();
        let top = flips.into_iter().max_by(|u, v| u.0.total_cmp(&v.0));
        match top {
            Some(c) if c.0 > cur + 1e-9 * (1.0 + cur.abs()) => {
                let rho = h.rho_of(&c.1);
                improve(&mut best, c);
                descend(rho, &mut best)?;
            }
            _ => break,
        }
    }
    Ok(best)
}

/// Solves the full-support program: heuristic incumbent, then
/// branch-and-bound under the configured limits. The reported `y` is the
/// exact oracle level of the returned weights.
pub fn solve_misocp_full(
    poly: &OccupationPolytope,
    a: &WassersteinAmbiguity,
    opts: &MisocpOptions,
) -> Result<MisocpOutcome> {
    let start = Instant::now();
    let (p, h) = build_misocp(poly, a)?;
    let mut warnings = Vec::new();
    let heur = if opts.heuristic {
        // half of any time budget is kept for branch-and-bound
        let deadline = opts
            .bnb
            .time_limit_s
            .map(|t| start + std::time::Duration::from_secs_f64(t / 2.0));
        pattern_heuristic(poly, a, &p, &h, opts, deadline)?
    } else {
        None
    };
    let heuristic_y = heur.as_ref().map(|c| c.0);
    let mut bopts = opts.bnb.clone();
    if let Some((_, x)) = &heur {
        bopts.incumbent = Some(x.clone());
    }
    if let Some(limit) = bopts.time_limit_s {
        bopts.time_limit_s = Some((limit - start.elapsed().as_secs_f64()).max(1.0));
    }
    let r = solve_misocp(&p, &bopts)?;
    let (status, x, program_y) = match r.status {
        SolveStatus::Optimal | SolveStatus::NodeLimit if r.has_point() => {
            (r.status, r.x.clone(), r.objective)
        }
        SolveStatus::NodeLimit => match heur {
            Some((v, x)) => (SolveStatus::NodeLimit, x, v),
            None => {
                return Err(Error::SolverFailure(
                    "branch-and-bound found no feasible point".into(),
                ))
            }
        },
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible(
                "mixed-binary program is infeasible".into(),
            ))
        }
        s => {
            return Err(Error::SolverFailure(format!(
                "branch-and-bound ended with {s:?}"
            )))
        }
    };
    let rho = h.rho_of(&x);
    let y = y_oracle(&rho, a)?;
    if y < program_y - 1e-6 * (1.0 + program_y.abs()) {
        let msg = format!("oracle level {y} is below the program value {program_y}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let big_m_valid = a
        .scenarios
        .rows()
        .iter()
        .all(|xi| (program_y - dot(&rho, xi)).abs() <= h.big_m + 1e-9);
    if !big_m_valid {
        let msg = format!(
            "big-M {} is below some |y - rho'xi| at the solution",
            h.big_m
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if status == SolveStatus::NodeLimit {
        warnings.push(
            "branch-and-bound stopped on its limits; the point is not certified optimal".into(),
        );
    }
    Ok(MisocpOutcome {
        y,
        rho,
        program_y,
        heuristic_y,
        status,
        bound: r.bound,
        nodes: r.nodes,
        iterations: r.iterations as u64,
        bound_history: r.bound_history,
        big_m: h.big_m,
        big_m_valid,
        warnings,
        program: p,
        x,
    })
}
