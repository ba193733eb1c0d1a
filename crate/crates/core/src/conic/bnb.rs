//! Best-first branch-and-bound over continuous conic relaxations.
//!
//! Binaries are relaxed to `[0, 1]`; a node fixes a subset of them with
//! equality rows. Nodes are explored by best bound with FIFO tie-break, and a
//! node is split on its most fractional binary (lowest index on ties). Both
//! children of a split are solved together, optionally in parallel; they are
//! inserted in a fixed order, so the search does not depend on scheduling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::backend::{solve_with_fixings, SolveOptions, SolveResult, SolveStatus};
use super::ir::{ConeProgram, LinExpr, Sense, Var};
use crate::config::TOL;
use crate::Result;

#[derive(Clone, Debug)]
pub struct BnbOptions {
    pub node_limit: usize,
    pub time_limit_s: Option<f64>,
    pub integrality_tol: f64,
    pub relative_gap: f64,
    pub parallel: bool,
    /// A known feasible point used as the starting incumbent.
    pub incumbent: Option<Vec<f64>>,
    pub solve: SolveOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            node_limit: 100_000,
            time_limit_s: None,
            integrality_tol: TOL.integrality,
            relative_gap: TOL.relative_gap,
            parallel: true,
            incumbent: None,
            solve: SolveOptions::default(),
        }
    }
}

struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(usize, f64)>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: larger bound first, then earlier sequence number
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The relaxation used at every node: binaries boxed into `[0, 1]`.
pub fn relaxation(p: &ConeProgram) -> ConeProgram {
    let mut r = p.clone();
    if !p.binaries.is_empty() {
        let mut rows = Vec::with_capacity(2 * p.binaries.len());
        for &b in &p.binaries {
            rows.push(LinExpr::var(Var(b)));
            rows.push(LinExpr::constant(1.0) - LinExpr::var(Var(b)));
        }
        r.add_nonneg("binary box", rows);
    }
    r
}

fn most_fractional(binaries: &[usize], x: &[f64], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &b in binaries {
        let frac = (x[b] - x[b].round()).abs();
        if frac > tol && best.map_or(true, |(_, f)| frac > f) {
            best = Some((b, frac));
        }
    }
    best.map(|(b, _)| b)
}

/// Solves a mixed-binary conic program to the configured relative gap.
pub fn solve_misocp(p: &ConeProgram, opts: &BnbOptions) -> Result<SolveResult> {
    p.validate()?;
    let start = Instant::now();
    let score_sign = match p.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let relaxed = relaxation(p);
    let mut binaries = p.binaries.clone();
    binaries.sort_unstable();
    binaries.dedup();

    let remaining = |start: &Instant| {
        opts.time_limit_s
            .map(|t| (t - start.elapsed().as_secs_f64()).max(0.0))
    };
    let solve_node = |fix: &[(usize, f64)], start: &Instant| -> Result<SolveResult> {
        let mut so = opts.solve.clone();
        if let Some(rem) = remaining(start) {
            so.time_limit_s = Some(so.time_limit_s.map_or(rem, |t| t.min(rem)).max(1e-3));
        }
        solve_with_fixings(&relaxed, fix, &so)
    };

    let mut inc: Option<(f64, Vec<f64>)> = None;
    if let Some(x0) = &opts.incumbent {
        let integral = most_fractional(&binaries, x0, opts.integrality_tol).is_none();
        let viol = relaxed.max_violation(x0);
        if x0.len() == p.n_vars && integral && viol <= opts.solve.feasibility_check {
            inc = Some((score_sign * p.objective_value(x0), x0.clone()));
        } else {
            log::warn!("supplied incumbent rejected (integral: {integral}, violation {viol:.2e})");
        }
    }

    let root = solve_node(&[], &start)?;
    let mut nodes = 1usize;
    let mut iterations = root.iterations;
    match root.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible | SolveStatus::Unbounded | SolveStatus::NumericalFailure
            if inc.is_none() =>
        {
            let mut r = root;
            r.wall_time_s = start.elapsed().as_secs_f64();
            return Ok(r);
        }
        _ => {}
    }

    let gap_closed = |bound: f64, inc: &Option<(f64, Vec<f64>)>| match inc {
        Some((v, _)) => bound - v <= opts.relative_gap * v.abs().max(1.0),
        None => false,
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut incomplete = false;
    if root.status == SolveStatus::Optimal {
        let s = score_sign * root.objective;
        if most_fractional(&binaries, &root.x, opts.integrality_tol).is_none() {
            if inc.as_ref().map_or(true, |(v, _)| s > *v) {
                inc = Some((s, root.x.clone()));
            }
        } else {
            heap.push(Node {
                bound: s,
                seq,
                fixings: Vec::new(),
                x: root.x.clone(),
            });
            seq += 1;
        }
    } else {
        incomplete = true;
    }

    let mut history = Vec::new();
    let mut hit_limit = false;
    loop {
        let open = heap.peek().map(|n| n.bound);
        let global = match (open, &inc) {
            (Some(b), Some((v, _))) => b.max(*v),
            (Some(b), None) => b,
            (None, Some((v, _))) => *v,
            (None, None) => f64::NEG_INFINITY,
        };
        history.push(score_sign * global);
        let Some(top) = open else { break };
        if gap_closed(top, &inc) {
            break;
        }
        if nodes >= opts.node_limit || remaining(&start).is_some_and(|r| r <= 0.0) {
            hit_limit = true;
            break;
        }
        let node = heap.pop().expect("peeked");
        let j = most_fractional(&binaries, &node.x, opts.integrality_tol)
            .expect("open nodes are fractional");
        let mut f0 = node.fixings.clone();
        f0.push((j, 0.0));
        let mut f1 = node.fixings;
        f1.push((j, 1.0));
        let (r0, r1) = if opts.parallel {
            rayon::join(|| solve_node(&f0, &start), || solve_node(&f1, &start))
        } else {
            (solve_node(&f0, &start), solve_node(&f1, &start))
        };
        nodes += 2;
        for (fix, r) in [(f0, r0?), (f1, r1?)] {
            iterations += r.iterations;
            match r.status {
                SolveStatus::Optimal => {
                    let s = score_sign * r.objective;
                    let bound = s.min(node.bound);
                    if gap_closed(bound, &inc) {
                        continue;
                    }
                    if most_fractional(&binaries, &r.x, opts.integrality_tol).is_none() {
                        if inc.as_ref().map_or(true, |(v, _)| s > *v) {
                            inc = Some((s, r.x));
                        }
                    } else {
                        heap.push(Node {
                            bound,
                            seq,
                            fixings: fix,
                            x: r.x,
                        });
                        seq += 1;
                    }
                }
                SolveStatus::Infeasible => {}
                _ => {
                    log::warn!("node relaxation ended with {:?}; subtree dropped", r.status);
                    incomplete = true;
                }
            }
        }
    }

    let open_bound = heap.peek().map(|n| n.bound);
    let mut res = match inc {
        Some((s, x)) => {
            let mut r = SolveResult::empty(if hit_limit || incomplete {
                SolveStatus::NodeLimit
            } else {
                SolveStatus::Optimal
            });
            r.objective = p.objective_value(&x);
            r.max_violation = Some(relaxed.max_violation(&x));
            r.bound = Some(score_sign * open_bound.map_or(s, |b| b.max(s)));
            r.x = x;
            r
        }
        None => {
            let mut r = SolveResult::empty(if hit_limit || incomplete {
                SolveStatus::NodeLimit
            } else {
                SolveStatus::Infeasible
            });
            r.bound = open_bound.map(|b| score_sign * b);
            r
        }
    };
    res.nodes = nodes;
    res.iterations = iterations;
    res.bound_history = history;
    res.wall_time_s = start.elapsed().as_secs_f64();
    Ok(res)
}
