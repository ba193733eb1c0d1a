//! Moments-based ambiguity sets D1 (known mean and covariance), D2 (known
//! mean, covariance bounded by `delta0 * Sigma`) and D3 (mean in an ellipsoid,
//! second moment bounded by `delta2 * Sigma`).
//!
//! Full support reduces to one second-order cone constraint with a
//! set-specific multiplier `kappa`. Nonnegative support leads to copositive
//! programs; those are approximated from inside by splitting each copositive
//! matrix into PSD plus entrywise-nonnegative parts, and the scalar multiplier
//! `lambda` that makes them bilinear is handled by an outer 1-D search.

#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{RiskLevel, Support};
use crate::conic::{solve_continuous, ConeProgram, LinExpr, Sense, SolveOptions, SolveStatus, Var};
use crate::linalg::cholesky_lower;
use crate::mdp::OccupationPolytope;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentKind {
    D1,
    D2,
    D3,
}

#[derive(Clone, Debug)]
pub struct MomentAmbiguity {
    pub kind: MomentKind,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub support: Support,
    pub epsilon: RiskLevel,
    chol: DMatrix<f64>,
}

impl MomentAmbiguity {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: MomentKind,
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        delta0: f64,
        delta1: f64,
        delta2: f64,
        support: Support,
        epsilon: RiskLevel,
    ) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::dim("covariance rows", mu.len(), sigma.nrows()));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mean has non-finite entries".into()));
        }
        // delta0 < 1 shrinks the covariance bound; it is accepted because the
        // reference experiments use 0.9, but it is flagged.
        match kind {
            MomentKind::D2 if !(delta0 > 0.0 && delta0.is_finite()) => {
                return Err(Error::Domain(format!("delta0 = {delta0} must be positive")))
            }
            MomentKind::D2 if delta0 < 1.0 => {
                log::warn!("delta0 = {delta0} < 1: D2 no longer contains D1")
            }
            MomentKind::D3 if !(delta1 >= 0.0 && delta1.is_finite()) => {
                return Err(Error::Domain(format!(
                    "delta1 = {delta1} must be nonnegative"
                )))
            }
            MomentKind::D3 if !(delta2 > 0.0 && delta2.is_finite()) => {
                return Err(Error::Domain(format!("delta2 = {delta2} must be positive")))
            }
            MomentKind::D3 if delta2 < 1.0 => {
                log::warn!("delta2 = {delta2} < 1: D3 no longer contains D1")
            }
            _ => {}
        }
        let chol = cholesky_lower(&sigma)?;
        Ok(Self {
            kind,
            mu,
            sigma,
            delta0,
            delta1,
            delta2,
            support,
            epsilon,
            chol,
        })
    }

    /// D1 with the other parameters at their neutral values.
    pub fn d1(
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        support: Support,
        epsilon: RiskLevel,
    ) -> Result<Self> {
        Self::new(MomentKind::D1, mu, sigma, 1.0, 0.0, 1.0, support, epsilon)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

pub fn kappa_d1(eps: RiskLevel) -> f64 {
    let e = eps.get();
    ((1.0 - e) / e).sqrt()
}

pub fn kappa_d2(eps: RiskLevel, delta0: f64) -> f64 {
    let e = eps.get();
    ((1.0 - e) * delta0 / e).sqrt()
}

pub fn kappa_d3(eps: RiskLevel, delta1: f64, delta2: f64) -> f64 {
    let e = eps.get();
    ((1.0 - e) * delta2 / e).sqrt() + delta1.sqrt()
}

pub fn kappa_for(a: &MomentAmbiguity) -> f64 {
    match a.kind {
        MomentKind::D1 => kappa_d1(a.epsilon),
        MomentKind::D2 => kappa_d2(a.epsilon, a.delta0),
        MomentKind::D3 => kappa_d3(a.epsilon, a.delta1, a.delta2),
    }
}

/// Handles into a program built around the occupation polytope.
#[derive(Clone, Debug)]
pub struct PolicyProgram {
    pub program: ConeProgram,
    pub y: Var,
    pub rho: Vec<Var>,
}

impl PolicyProgram {
    pub fn extract(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (x[self.y.0], self.rho.iter().map(|v| x[v.0]).collect())
    }
}

/// `max y  s.t.  mu' rho - kappa ||L' rho|| >= y,  rho in Q`.
///
/// `L' rho` is introduced as an auxiliary vector through equality rows; with
/// a triangular `L` this keeps the backend's KKT system far sparser than a
/// dense cone row would.
pub fn kappa_socp(
    poly: &OccupationPolytope,
    mu: &[f64],
    chol: &DMatrix<f64>,
    kappa: f64,
) -> Result<PolicyProgram> {
    let n = poly.n_pairs();
    if mu.len() != n {
        return Err(Error::dim("mean vector", n, mu.len()));
    }
    if chol.nrows() != n {
        return Err(Error::dim("covariance factor", n, chol.nrows()));
    }
    let mut p = ConeProgram::new(Sense::Maximize);
    let y = p.add_var("y");
    let rho = poly.add_to(&mut p);
    p.set_objective(LinExpr::var(y));
    let mut head = LinExpr::dot(&rho, mu).with(y, -1.0);
    if kappa != 0.0 {
        let u = p.add_var("u");
        let w = p.add_vars("w", n);
        let rows = (0..n)
            .map(|i| {
                let mut e = LinExpr::term(w[i], -1.0);
                for j in i..n {
                    let c = chol[(j, i)];
                    if c != 0.0 {
                        e = e.with(rho[j], c);
                    }
                }
                e
            })
            .collect();
        p.add("w = L' rho", crate::conic::Cone::Zero, rows);
        p.add_soc(
            "u >= ||w||",
            LinExpr::var(u),
            w.iter().map(|&v| LinExpr::var(v)).collect(),
        );
        head = head.with(u, -kappa);
    }
    p.add_ge0("chance constraint", head);
    Ok(PolicyProgram { program: p, y, rho })
}

pub fn build_full_support_socp(
    poly: &OccupationPolytope,
    a: &MomentAmbiguity,
) -> Result<PolicyProgram> {
    if a.support != Support::Full {
        return Err(Error::Unsupported(
            "the SOCP form needs full support".into(),
        ));
    }
    kappa_socp(poly, &a.mu, &a.chol, kappa_for(a))
}

/// Symmetric matrix of affine expressions, stored densely.
pub type ExprMatrix = Vec<Vec<LinExpr>>;

/// Imposes `M = P + N` with `P` PSD and `N` symmetric, entrywise nonnegative
/// with zero diagonal, an inner approximation of copositivity that is exact up
/// to dimension four. A nonnegative diagonal part of `N` could always be moved
/// into `P`, so fixing it at zero loses nothing.
pub fn approximate_cop_constraint(p: &mut ConeProgram, label: &str, m: &ExprMatrix) -> Vec<Var> {
    let dim = m.len();
    let mut nvars = Vec::new();
    let mut nidx = vec![vec![None; dim]; dim];
    for j in 0..dim {
        for i in (j + 1)..dim {
            let v = p.add_var(format!("{label}.N[{i},{j}]"));
            nidx[i][j] = Some(v);
            nvars.push(v);
        }
    }
    p.add_nonneg(
        format!("{label} N >= 0"),
        nvars.iter().map(|&v| LinExpr::var(v)).collect(),
    );
    p.add_psd(format!("{label} M - N psd"), dim, |i, j| {
        let e = m[i][j].clone();
        match nidx[i][j] {
            Some(v) => e.with(v, -1.0),
            None => e,
        }
    });
    nvars
}

/// Copositive program for fixed `lambda`, with each copositive block replaced
/// by its PSD + nonnegative inner approximation.
pub fn build_copositive_program(
    poly: &OccupationPolytope,
    a: &MomentAmbiguity,
    lambda: f64,
) -> Result<PolicyProgram> {
    let n = poly.n_pairs();
    if a.dim() != n {
        return Err(Error::dim("mean vector", n, a.dim()));
    }
    if a.support != Support::Nonnegative {
        return Err(Error::Unsupported(
            "copositive form needs nonnegative support".into(),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must be a nonnegative number"
        )));
    }
    let eps = a.epsilon.get();
    let mu = &a.mu;
    let sigma = &a.sigma;

    let mut p = ConeProgram::new(Sense::Maximize);
    let y = p.add_var("y");
    let rho = poly.add_to(&mut p);
    p.set_objective(LinExpr::var(y));

    // symmetric Q through its lower triangle
    let mut qvar = vec![vec![Var(0); n]; n];
    for j in 0..n {
        for i in j..n {
            let v = p.add_var(format!("Q[{i},{j}]"));
            qvar[i][j] = v;
            qvar[j][i] = v;
        }
    }
    let qv = p.add_vars("q", n);
    let t = p.add_var("t");

    let q_entry = |i: usize, j: usize| LinExpr::var(qvar[i][j]);
    // (Q mu)_i
    let q_mu = |i: usize| {
        let mut e = LinExpr::zero();
        for j in 0..n {
            e = e.with(qvar[i][j], mu[j]);
        }
        e
    };
    // sum_ij c_ij Q_ij
    let frob = |c: &dyn Fn(usize, usize) -> f64| {
        let mut e = LinExpr::zero();
        for i in 0..n {
            for j in 0..n {
                e = e.with(qvar[i][j], c(i, j));
            }
        }
        e
    };
    let mu_q_mu = frob(&|i, j| mu[i] * mu[j]);
    let sigma_q = frob(&|i, j| sigma[(i, j)]);
    let q_dot_mu = LinExpr::dot(&qv, mu);
    let lam_rho = |i: usize| LinExpr::term(rho[i], lambda);

    // Builds the (n+1)x(n+1) block [[top, off], [off', corner]].
    let block =
        |top: &dyn Fn(usize, usize) -> LinExpr, off: &dyn Fn(usize) -> LinExpr, corner: LinExpr| {
            let mut m: ExprMatrix = vec![vec![LinExpr::zero(); n + 1]; n + 1];
            for i in 0..n {
                for j in 0..n {
                    m[i][j] = top(i, j);
                }
                m[n][i] = off(i);
                m[i][n] = m[n][i].clone();
            }
            m[n][n] = corner;
            m
        };

    let psd_q = |p: &mut ConeProgram| p.add_psd("Q psd", n, &q_entry);

    match a.kind {
        MomentKind::D1 => {
            // eps + t + Q.Sigma + q'mu >= 0
            p.add_ge0(
                "(i) worst-case probability",
                (LinExpr::var(t) + sigma_q.clone() + q_dot_mu.clone()).plus(eps),
            );
            let neg_q = |i: usize, j: usize| -q_entry(i, j);
            let off_u = |i: usize| LinExpr::term(qv[i], -0.5) + q_mu(i);
            let corner_u = -LinExpr::var(t) - mu_q_mu.clone();
            let u = block(&neg_q, &off_u, corner_u.clone());
            approximate_cop_constraint(&mut p, "(ii) U", &u);
            let off_z = |i: usize| off_u(i) + lam_rho(i) * 0.5;
            let z = block(&neg_q, &off_z, corner_u.plus(-1.0).with(y, -lambda));
            approximate_cop_constraint(&mut p, "(iii) Z", &z);
        }
        MomentKind::D2 => {
            psd_q(&mut p);
            // eps + t + mu'q + mu'Q mu - delta0 Sigma.Q >= 0
            p.add_ge0(
                "(i) worst-case probability",
                (LinExpr::var(t) + q_dot_mu.clone() + mu_q_mu.clone() - sigma_q.clone() * a.delta0)
                    .plus(eps),
            );
            let pos_q = |i: usize, j: usize| q_entry(i, j);
            let off_u = |i: usize| LinExpr::term(qv[i], -0.5) - q_mu(i);
            let u = block(&pos_q, &off_u, -LinExpr::var(t));
            approximate_cop_constraint(&mut p, "(ii) U", &u);
            let off_z = |i: usize| off_u(i) + lam_rho(i) * 0.5;
            let z = block(
                &pos_q,
                &off_z,
                (-LinExpr::var(t)).plus(-1.0).with(y, -lambda),
            );
            approximate_cop_constraint(&mut p, "(iii) Z", &z);
        }
        MomentKind::D3 => {
            psd_q(&mut p);
            let r = p.add_var("r");
            p.add_ge0(
                "(i) worst-case probability",
                LinExpr::constant(eps) - LinExpr::var(r) - LinExpr::var(t),
            );
            let pos_q = |i: usize, j: usize| q_entry(i, j);
            let half_q = |i: usize| LinExpr::term(qv[i], 0.5);
            approximate_cop_constraint(&mut p, "(ii) U", &block(&pos_q, &half_q, LinExpr::var(r)));
            // t >= (delta2 Sigma + mu mu').Q + mu'q + sqrt(delta1) ||L'(q + 2 Q mu)||
            let lin =
                LinExpr::var(t) - sigma_q.clone() * a.delta2 - mu_q_mu.clone() - q_dot_mu.clone();
            if a.delta1 > 0.0 {
                let s1 = a.delta1.sqrt();
                let v: Vec<LinExpr> = (0..n)
                    .map(|i| LinExpr::var(qv[i]) + q_mu(i) * 2.0)
                    .collect();
                let l = &a.chol;
                let rows = (0..n)
                    .map(|i| {
                        let mut e = LinExpr::zero();
                        for j in i..n {
                            e.add_scaled(&v[j], s1 * l[(j, i)]);
                        }
                        e
                    })
                    .collect();
                p.add_soc("(iii) mean ellipsoid", lin, rows);
            } else {
                p.add_ge0("(iii) mean ellipsoid", lin);
            }
            let off_z = |i: usize| half_q(i) + lam_rho(i) * 0.5;
            let z = block(&pos_q, &off_z, LinExpr::var(r).plus(-1.0).with(y, -lambda));
            approximate_cop_constraint(&mut p, "(iv) Z", &z);
        }
    }
    Ok(PolicyProgram { program: p, y, rho })
}

/// Parameters of the outer search over `lambda`.
#[derive(Clone, Debug)]
pub struct LambdaSearch {
    pub lo_exp: f64,
    pub hi_exp: f64,
    /// Positive grid points, log-spaced over `[10^lo_exp, 10^hi_exp]`.
    pub points: usize,
    /// Golden-section stops when the bracket in `log10(lambda)` is this narrow.
    pub log_tol: f64,
    pub parallel: bool,
    /// Options of every fixed-`lambda` solve. The iteration cap is lower than
    /// the default: a `lambda` whose program does not converge quickly is
    /// dropped from the search rather than waited on.
    pub solve: SolveOptions,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            lo_exp: -3.0,
            hi_exp: 3.0,
            points: 24,
            log_tol: 1e-3,
            parallel: true,
            solve: SolveOptions {
                max_iter: 50,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct NonnegativeOutcome {
    pub y: f64,
    pub rho: Vec<f64>,
    pub lambda: f64,
    pub evaluations: usize,
    pub iterations: u64,
    pub warnings: Vec<String>,
    pub program: ConeProgram,
}

struct Eval {
    lambda: f64,
    value: f64,
    x: Option<(Vec<f64>, u32)>,
}

fn eval_lambda(
    poly: &OccupationPolytope,
    a: &MomentAmbiguity,
    lambda: f64,
    opts: &SolveOptions,
) -> Result<Eval> {
    let pp = build_copositive_program(poly, a, lambda)?;
    let r = solve_continuous(&pp.program, opts)?;
    Ok(match r.status {
        SolveStatus::Optimal => Eval {
            lambda,
            value: r.objective,
            x: Some((r.x, r.iterations)),
        },
        s => {
            log::debug!("lambda = {lambda:.4e}: {s:?}");
            Eval {
                lambda,
                value: f64::NEG_INFINITY,
                x: None,
            }
        }
    })
}

/// Maximizes the fixed-`lambda` conic value over `lambda >= 0`: a grid of
/// `{0}` plus log-spaced points, then golden-section in `log10(lambda)` on the
/// bracket around the best grid point. If the best point sits on the grid
/// boundary the grid is extended once by its own width and a warning is kept.
pub fn solve_moments_nonnegative(
    poly: &OccupationPolytope,
    a: &MomentAmbiguity,
    search: &LambdaSearch,
) -> Result<NonnegativeOutcome> {
    let grid = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (k - 1).max(1) as f64))
            .collect()
    };
    let evaluate = |ls: &[f64]| -> Result<Vec<Eval>> {
        if search.parallel {
            ls.par_iter()
                .map(|&l| eval_lambda(poly, a, l, &search.solve))
                .collect()
        } else {
            ls.iter()
                .map(|&l| eval_lambda(poly, a, l, &search.solve))
                .collect()
        }
    };

    let mut warnings = Vec::new();
    let mut lambdas = vec![0.0];
    lambdas.extend(grid(search.lo_exp, search.hi_exp, search.points));
    let mut evals = evaluate(&lambdas)?;
    let step = (search.hi_exp - search.lo_exp) / (search.points - 1).max(1) as f64;

    let best_index = |ev: &[Eval]| {
        ev.iter()
            .enumerate()
            .filter(|(_, e)| e.x.is_some())
            .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then_with(|| b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    };
    let Some(mut best) = best_index(&evals) else {
        return Err(Error::Infeasible(
            "no lambda on the search grid gave a feasible program".into(),
        ));
    };

    let width = search.hi_exp - search.lo_exp;
    let at_low = best == 1;
    let at_high = best == evals.len() - 1;
    if (at_low || at_high) && evals.len() > 2 {
        let (lo, hi) = if at_high {
            (search.hi_exp + step, search.hi_exp + width)
        } else {
            (search.lo_exp - width, search.lo_exp - step)
        };
        let msg = format!(
            "lambda search hit the {} end of the grid; extended to [1e{lo:.1}, 1e{hi:.1}]",
            if at_high { "upper" } else { "lower" }
        );
        log::warn!("{msg}");
        warnings.push(msg);
        let extra = grid(lo, hi, search.points);
        let more = evaluate(&extra)?;
        evals.extend(more);
        evals[1..].sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
        best = best_index(&evals).expect("earlier best is still present");
        if best == 1 || best == evals.len() - 1 {
            let msg = "lambda optimum still on the extended grid boundary".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut evaluations = evals.len();
    let mut best_eval = evals.swap_remove(best);
    if best_eval.lambda > 0.0 {
        // bracket in log10 space around the best positive grid point
        let center = best_eval.lambda.log10();
        let (mut lo, mut hi) = (center - step, center + step);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let mut fc = eval_lambda(poly, a, 10f64.powf(c), &search.solve)?;
        let mut fd = eval_lambda(poly, a, 10f64.powf(d), &search.solve)?;
        evaluations += 2;
        while hi - lo > search.log_tol {
            if fc.value >= fd.value {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = eval_lambda(poly, a, 10f64.powf(c), &search.solve)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = eval_lambda(poly, a, 10f64.powf(d), &search.solve)?;
            }
            evaluations += 1;
            for cand in [&fc, &fd] {
                if cand.x.is_some() && cand.value > best_eval.value {
                    best_eval = Eval {
                        lambda: cand.lambda,
                        value: cand.value,
                        x: cand.x.clone(),
                    };
                }
            }
        }
    }

    let pp = build_copositive_program(poly, a, best_eval.lambda)?;
    let (x, iters) = best_eval.x.expect("best evaluation is feasible");
    let (y, rho) = pp.extract(&x);
    Ok(NonnegativeOutcome {
        y,
        rho,
        lambda: best_eval.lambda,
        evaluations,
        iterations: iters as u64,
        warnings,
        program: pp.program,
    })
}
