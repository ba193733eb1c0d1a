//! Exact worst-case probability over an order-1 Wasserstein ball.
//!
//! For a fixed `(rho, y)` the worst case equals
//! `min_{lambda >= 0} lambda theta + (1/H) sum_i max(0, 1 - lambda d_i)`,
//! where `d_i` is the distance from scenario `i` to the violation set
//! `{z in support : rho'z <= y}`. The objective is piecewise linear in the
//! scalar `lambda`, so its minimum sits at a breakpoint.

use rayon::prelude::*;

use super::WassersteinAmbiguity;
use crate::ambiguity::Support;
use crate::conic::{solve_continuous, ConeProgram, LinExpr, Sense, SolveOptions, SolveStatus};
use crate::linalg::{dot, norm2};
use crate::{Error, Result};

/// Distance from `xi` to the halfspace `{z : rho'z <= y}`.
pub fn projection_distance(xi: &[f64], rho: &[f64], y: f64) -> Result<f64> {
    let n = norm2(rho);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(((dot(rho, xi) - y) / n).max(0.0))
}

/// Minimizer of `||xi - z||` over `{z >= 0 : rho'z <= y}` as `(z, tau)`, where
/// `z = max(0, xi - tau rho)` and `tau` is the multiplier of the halfspace.
/// `None` when the set is empty.
fn nonneg_projection(xi: &[f64], rho: &[f64], y: f64) -> Option<(Vec<f64>, f64)> {
    let z_at = |tau: f64| -> Vec<f64> {
        xi.iter()
            .zip(rho)
            .map(|(x, r)| (x - tau * r).max(0.0))
            .collect()
    };
    let g = |z: &[f64]| dot(rho, z);
    let z0 = z_at(0.0);
    if g(&z0) <= y {
        return Some((z0, 0.0));
    }
    // active set at tau = 0+ and the crossing points where it changes
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (k, (&x, &r)) in xi.iter().zip(rho).enumerate() {
        if r == 0.0 {
            continue;
        }
        let c = x / r;
        let active_near_zero = x > 0.0 || (x == 0.0 && r < 0.0);
        if active_near_zero {
            s1 += r * x;
            s2 += r * r;
        }
        if c > 0.0 {
            events.push((c, k));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut lo = 0.0;
    for &(c, k) in &events {
        // g is affine on [lo, c]
        if s2 > 0.0 {
            let root = (s1 - y) / s2;
            if root <= c {
                let tau = root.max(lo);
                return Some((z_at(tau), tau));
            }
        }
        let (x, r) = (xi[k], rho[k]);
        if r > 0.0 {
            s1 -= r * x;
            s2 -= r * r;
        } else {
            s1 += r * x;
            s2 += r * r;
        }
        s2 = s2.max(0.0);
        lo = c;
    }
    if s2 > 1e-300 {
        let tau = ((s1 - y) / s2).max(lo);
        Some((z_at(tau), tau))
    } else {
        None
    }
}

/// Distance from `xi` to `{z >= 0 : rho'z <= y}`; infinite when that set is
/// empty.
pub fn nonneg_distance(xi: &[f64], rho: &[f64], y: f64) -> f64 {
    match nonneg_projection(xi, rho, y) {
        Some((z, _)) => xi
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        None => f64::INFINITY,
    }
}

/// Optimal `(lambda, zeta)` of the dual of the nonnegative-orthant distance
/// problem, `max lambda (rho'xi - y) - zeta'xi  s.t.  ||zeta - lambda rho|| <= 1`,
/// built from the primal minimizer. `None` when the dual is unbounded.
pub fn nonneg_distance_dual(xi: &[f64], rho: &[f64], y: f64) -> Option<(f64, Vec<f64>)> {
    let (z, tau) = nonneg_projection(xi, rho, y)?;
    let d = xi
        .iter()
        .zip(&z)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if d <= 0.0 {
        return Some((0.0, vec![0.0; xi.len()]));
    }
    let zeta = xi
        .iter()
        .zip(rho)
        .map(|(x, r)| (tau * r - x).max(0.0) / d)
        .collect();
    Some((tau / d, zeta))
}

/// Same distance through the conic backend: `min u  s.t. ||xi - z|| <= u,
/// rho'z <= y, z >= 0`.
pub fn nonneg_distance_socp(xi: &[f64], rho: &[f64], y: f64) -> Result<f64> {
    let n = xi.len();
    let mut p = ConeProgram::new(Sense::Minimize);
    let u = p.add_var("u");
    let z = p.add_vars("z", n);
    p.set_objective(LinExpr::var(u));
    p.add_soc(
        "u >= ||xi - z||",
        LinExpr::var(u),
        (0..n)
            .map(|k| LinExpr::constant(xi[k]) - LinExpr::var(z[k]))
            .collect(),
    );
    p.add_ge0("rho'z <= y", LinExpr::constant(y) - LinExpr::dot(&z, rho));
    p.add_nonneg("z >= 0", z.iter().map(|&v| LinExpr::var(v)).collect());
    let r = solve_continuous(&p, &SolveOptions::default())?;
    match r.status {
        SolveStatus::Optimal => Ok(r.objective),
        SolveStatus::Infeasible => Ok(f64::INFINITY),
        s => Err(Error::SolverFailure(format!(
            "distance program ended with {s:?}"
        ))),
    }
}

/// Support-appropriate distances of all scenarios. Under nonnegative support
/// tiny negative weights left by the solver are clamped to zero.
pub fn distances(rho: &[f64], y: f64, a: &WassersteinAmbiguity) -> Result<Vec<f64>> {
    if a.scenarios.dim() != rho.len() {
        return Err(Error::dim("weight vector", a.scenarios.dim(), rho.len()));
    }
    if norm2(rho) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let rows = a.scenarios.rows();
    let parallel = rows.len() * rho.len() > 20_000;
    match a.support {
        Support::Full => {
            let n = norm2(rho);
            let f = |xi: &Vec<f64>| ((dot(rho, xi) - y) / n).max(0.0);
            Ok(if parallel {
                rows.par_iter().map(f).collect()
            } else {
                rows.iter().map(f).collect()
            })
        }
        Support::Nonnegative => {
            let clamped: Vec<f64> = rho.iter().map(|r| r.max(0.0)).collect();
            if norm2(&clamped) == 0.0 {
                return Err(Error::ZeroVector);
            }
            let f = |xi: &Vec<f64>| nonneg_distance(xi, &clamped, y);
            Ok(if parallel {
                rows.par_iter().map(f).collect()
            } else {
                rows.iter().map(f).collect()
            })
        }
    }
}

/// `inf_{lambda >= 0} lambda theta + (1/H) sum max(0, 1 - lambda d_i)`,
/// evaluated at `lambda = 0`, its right limit, and every `1/d_i`.
pub fn worst_case_from_distances(d: &[f64], theta: f64) -> f64 {
    let h = d.len() as f64;
    let zeros = d.iter().filter(|&&v| v <= 0.0).count() as f64;
    let finite = d.iter().filter(|v| v.is_finite()).count() as f64;
    let mut pos: Vec<f64> = d
        .iter()
        .copied()
        .filter(|&v| v > 0.0 && v.is_finite())
        .collect();
    pos.sort_by(f64::total_cmp);
    // lambda = 0 gives 1; lambda -> 0+ drops every infinitely far scenario
    let mut best = f64::min(1.0, finite / h);
    let mut prefix = 0.0;
    for (c, &dj) in pos.iter().enumerate() {
        // scenarios with d_i < d_j contribute 1 - d_i/d_j; ties contribute 0
        let v = theta / dj + (zeros + c as f64 - prefix / dj) / h;
        best = best.min(v);
        prefix += dj;
    }
    best.clamp(0.0, 1.0)
}

/// Brute-force reference: the same objective on `n` evenly spaced
/// multipliers in `[0, lambda_max]`.
pub fn worst_case_from_distances_grid(d: &[f64], theta: f64, lambda_max: f64, n: usize) -> f64 {
    let h = d.len() as f64;
    (0..=n)
        .map(|k| {
            let l = lambda_max * k as f64 / n as f64;
            let s: f64 = d
                .iter()
                .map(|&di| {
                    if di.is_infinite() {
                        if l > 0.0 {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        (1.0 - l * di).max(0.0)
                    }
                })
                .sum();
            l * theta + s / h
        })
        .fold(f64::INFINITY, f64::min)
}

/// `sup_F P_F(rho'xi <= y)` over the ball.
pub fn wasserstein_worst_case_prob(rho: &[f64], y: f64, a: &WassersteinAmbiguity) -> Result<f64> {
    Ok(worst_case_from_distances(&distances(rho, y, a)?, a.theta))
}

/// Largest `y` whose worst-case violation probability stays within `eps` for
/// the fixed weights `rho`, by bisection on the monotone oracle. The returned
/// value is always on the feasible side.
pub fn y_oracle(rho: &[f64], a: &WassersteinAmbiguity) -> Result<f64> {
    let eps = a.epsilon.get();
    let values: Vec<f64> = a.scenarios.rows().iter().map(|xi| dot(rho, xi)).collect();
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let feasible = |y: f64| -> Result<bool> { Ok(wasserstein_worst_case_prob(rho, y, a)? <= eps) };

    let mut lo = vmin - a.theta / eps * norm2(rho);
    let mut step = 1e-6 * (1.0 + lo.abs());
    while !feasible(lo)? {
        lo -= step;
        step *= 2.0;
        if !lo.is_finite() {
            return Err(Error::SolverFailure(
                "no feasible level found for the oracle".into(),
            ));
        }
    }
    let mut hi = vmax + 1.0;
    if feasible(hi)? {
        // only possible when the adversary cannot reach the violation set
        let mut step = 1.0 + hi.abs();
        while feasible(hi)? {
            lo = hi;
            hi += step;
            step *= 2.0;
            if !hi.is_finite() {
                return Err(Error::SolverFailure("oracle level is unbounded".into()));
            }
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
