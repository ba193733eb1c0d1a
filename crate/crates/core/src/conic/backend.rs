//! Continuous conic solves through the Clarabel interior-point solver.
//!
//! Clarabel's standard form is `A x + s = b, s in K`. A block `G x + h in K`
//! maps to `A = -G`, `b = h`. Clarabel stacks PSD blocks as the *upper*
//! triangle in column-major order, so PSD rows are permuted on the way in and
//! the duals permuted back on the way out.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{NonnegativeConeT, PSDTriangleConeT, SecondOrderConeT, ZeroConeT},
};
use serde::{Deserialize, Serialize};

use super::ir::{psd_index, Cone, ConeProgram, LinExpr, Sense};
use crate::config::TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    /// Branch-and-bound stopped on its node or time budget. The point, if any,
    /// is feasible but not certified optimal.
    NodeLimit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective in the program's own sense; NaN when no point is returned.
    pub objective: f64,
    /// Dual bound reported by the backend (or best open bound for B&B).
    pub bound: Option<f64>,
    /// Primal point; empty unless a feasible point is available.
    pub x: Vec<f64>,
    /// Conic duals in the program's row order.
    pub dual: Option<Vec<f64>>,
    pub iterations: u32,
    pub nodes: usize,
    pub wall_time_s: f64,
    pub max_violation: Option<f64>,
    /// Best open bound after each processed node (branch-and-bound only).
    pub bound_history: Vec<f64>,
}

impl SolveResult {
    pub fn has_point(&self) -> bool {
        !self.x.is_empty()
    }

    pub(crate) fn empty(status: SolveStatus) -> Self {
        Self {
            status,
            objective: f64::NAN,
            bound: None,
            x: Vec::new(),
            dual: None,
            iterations: 0,
            nodes: 0,
            wall_time_s: 0.0,
            max_violation: None,
            bound_history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub time_limit_s: Option<f64>,
    pub max_iter: u32,
    pub verbose: bool,
    /// Accepted scaled cone violation of a returned point.
    pub feasibility_check: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit_s: None,
            max_iter: 200,
            verbose: false,
            feasibility_check: TOL.cone,
        }
    }
}

/// Solves the continuous program; binary markers are ignored.
pub fn solve_continuous(p: &ConeProgram, opts: &SolveOptions) -> crate::Result<SolveResult> {
    solve_with_fixings(p, &[], opts)
}

/// Solves `p` with extra equality rows `x_j = v` appended.
pub fn solve_with_fixings(
    p: &ConeProgram,
    fixings: &[(usize, f64)],
    opts: &SolveOptions,
) -> crate::Result<SolveResult> {
    p.validate()?;
    let start = Instant::now();
    let n = p.n_vars;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::with_capacity(p.n_rows() + fixings.len());
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    // program row index for every backend row; used to map duals back
    let mut origin: Vec<usize> = Vec::with_capacity(b.capacity());

    let push_row = |row: &LinExpr, triplets: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
        let r = b.len();
        for &(j, c) in &row.terms {
            triplets.push((j, r, -c));
        }
        b.push(row.constant);
    };

    let mut base = 0;
    for c in &p.constraints {
        match c.cone {
            Cone::Psd { dim } => {
                for col in 0..dim {
                    for row in 0..=col {
                        let k = psd_index(dim, col, row);
                        push_row(&c.rows[k], &mut triplets, &mut b);
                        origin.push(base + k);
                    }
                }
                cones.push(PSDTriangleConeT(dim));
            }
            cone => {
                for (k, r) in c.rows.iter().enumerate() {
                    push_row(r, &mut triplets, &mut b);
                    origin.push(base + k);
                }
                cones.push(match cone {
                    Cone::Zero => ZeroConeT(c.rows.len()),
                    Cone::Nonneg => NonnegativeConeT(c.rows.len()),
                    Cone::Soc => SecondOrderConeT(c.rows.len()),
                    Cone::Psd { .. } => unreachable!(),
                });
            }
        }
        base += c.rows.len();
    }
    if !fixings.is_empty() {
        for &(j, v) in fixings {
            push_row(
                &LinExpr::constant(-v).with(super::Var(j), 1.0),
                &mut triplets,
                &mut b,
            );
            origin.push(usize::MAX);
        }
        cones.push(ZeroConeT(fixings.len()));
    }

    let m = b.len();
    let a = csc_from_triplets(m, n, triplets);
    let pmat = CscMatrix::<f64>::zeros((n, n));
    let sign = match p.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut q = vec![0.0; n];
    for &(j, c) in &p.objective.terms {
        q[j] += sign * c;
    }

    let settings = DefaultSettings {
        verbose: opts.verbose,
        max_iter: opts.max_iter,
        time_limit: opts.time_limit_s.unwrap_or(f64::INFINITY),
        direct_solve_method: if a.nnz() > 10_000 { "faer" } else { "qdldl" }.into(),
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
        .map_err(|e| crate::Error::SolverFailure(format!("backend rejected program: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let mut dual = vec![0.0; p.n_rows()];
    for (r, &o) in origin.iter().enumerate() {
        if o != usize::MAX {
            dual[o] = sol.z[r];
        }
    }

    let mut res = SolveResult::empty(SolveStatus::NumericalFailure);
    res.iterations = sol.iterations;
    let c0 = p.objective.constant;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = sol.x.clone();
            let mut viol = p.max_violation(&x);
            for &(j, v) in fixings {
                viol = viol.max((x[j] - v).abs() / v.abs().max(1.0));
            }
            res.max_violation = Some(viol);
            if viol <= opts.feasibility_check {
                res.status = SolveStatus::Optimal;
                res.objective = p.objective_value(&x);
                res.bound = Some(sign * sol.obj_val_dual + c0);
                res.x = x;
                res.dual = Some(dual);
            } else {
                log::debug!(
                    "backend returned {:?} with scaled violation {viol:.3e}",
                    sol.status
                );
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            res.status = SolveStatus::Infeasible;
            res.dual = Some(dual);
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            res.status = SolveStatus::Unbounded;
        }
        other => {
            log::debug!("backend stopped with {other:?}");
        }
    }
    res.wall_time_s = start.elapsed().as_secs_f64();
    Ok(res)
}

fn csc_from_triplets(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_unstable_by_key(|a| (a.0, a.1));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (col, row, v) in t {
        if last == Some((col, row)) {
            *nzval.last_mut().expect("merged entry") += v;
            continue;
        }
        last = Some((col, row));
        rowval.push(row);
        nzval.push(v);
        colptr[col + 1] += 1;
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    // merged duplicates can cancel to zero; the backend tolerates explicit zeros
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
