//! Solver-agnostic conic program representation.
//!
//! Every constraint block is a list of affine rows `g_i' x + h_i` that must lie
//! in a cone. Second-order blocks store the epigraph variable first
//! (`t >= ||x||`). PSD blocks of declared dimension `n` store the
//! `n(n+1)/2` entries of a symmetric matrix in lower-triangular column-major
//! order with off-diagonal entries multiplied by `sqrt(2)`, so the Euclidean
//! inner product of two stacked vectors equals the trace inner product.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Index of a decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub usize);

/// Affine expression `sum c_j x_j + constant`. Repeated indices are summed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: Var, c: f64) -> Self {
        Self {
            terms: vec![(v.0, c)],
            constant: 0.0,
        }
    }

    /// Sum of `coef[k] * vars[k]`.
    pub fn dot(vars: &[Var], coef: &[f64]) -> Self {
        debug_assert_eq!(vars.len(), coef.len());
        Self {
            terms: vars
                .iter()
                .zip(coef)
                .filter(|(_, c)| **c != 0.0)
                .map(|(v, c)| (v.0, *c))
                .collect(),
            constant: 0.0,
        }
    }

    pub fn with(mut self, v: Var, c: f64) -> Self {
        if c != 0.0 {
            self.terms.push((v.0, c));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        self.terms
            .extend(other.terms.iter().map(|&(j, c)| (j, c * s)));
        self.constant += other.constant * s;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>() + self.constant
    }

    /// Largest absolute summand at `x`; used to scale feasibility checks.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(j, c)| (c * x[j]).abs())
            .fold(self.constant.abs(), f64::max)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::var(v)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, s: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cone {
    Zero,
    Nonneg,
    Soc,
    Psd { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub cone: Cone,
    pub rows: Vec<LinExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeProgram {
    pub n_vars: usize,
    pub var_names: Vec<String>,
    pub sense: Sense,
    pub objective: LinExpr,
    pub constraints: Vec<Constraint>,
    pub binaries: Vec<usize>,
}

/// Position of entry `(i, j)`, `i >= j`, in the stacked lower triangle.
pub fn psd_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < dim);
    // column j starts after sum_{c<j} (dim - c) entries
    j * dim - j * j.saturating_sub(1) / 2 + (i - j)
}

pub fn psd_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl ConeProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            n_vars: 0,
            var_names: Vec::new(),
            sense,
            objective: LinExpr::zero(),
            constraints: Vec::new(),
            binaries: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.var_names.push(name.into());
        self.n_vars += 1;
        Var(self.n_vars - 1)
    }

    pub fn add_vars(&mut self, prefix: &str, n: usize) -> Vec<Var> {
        (0..n)
            .map(|k| self.add_var(format!("{prefix}[{k}]")))
            .collect()
    }

    pub fn set_objective(&mut self, e: LinExpr) {
        self.objective = e;
    }

    pub fn mark_binary(&mut self, v: Var) {
        self.binaries.push(v.0);
    }

    pub fn add(&mut self, label: impl Into<String>, cone: Cone, rows: Vec<LinExpr>) {
        self.constraints.push(Constraint {
            label: label.into(),
            cone,
            rows,
        });
    }

    /// `e == 0`.
    pub fn add_eq(&mut self, label: impl Into<String>, e: LinExpr) {
        self.add(label, Cone::Zero, vec![e]);
    }

    /// `e >= 0`.
    pub fn add_ge0(&mut self, label: impl Into<String>, e: LinExpr) {
        self.add(label, Cone::Nonneg, vec![e]);
    }

    /// Each expression `>= 0`, as one block.
    pub fn add_nonneg(&mut self, label: impl Into<String>, rows: Vec<LinExpr>) {
        self.add(label, Cone::Nonneg, rows);
    }

    /// `t >= ||xs||_2`.
    pub fn add_soc(&mut self, label: impl Into<String>, t: LinExpr, xs: Vec<LinExpr>) {
        let mut rows = Vec::with_capacity(xs.len() + 1);
        rows.push(t);
        rows.extend(xs);
        self.add(label, Cone::Soc, rows);
    }

    /// Symmetric matrix `entry(i, j)` (read for `i >= j`) is PSD.
    pub fn add_psd<F>(&mut self, label: impl Into<String>, dim: usize, mut entry: F)
    where
        F: FnMut(usize, usize) -> LinExpr,
    {
        let mut rows = Vec::with_capacity(psd_len(dim));
        for j in 0..dim {
            for i in j..dim {
                let e = entry(i, j);
                rows.push(if i == j { e } else { e * SQRT2 });
            }
        }
        self.add(label, Cone::Psd { dim }, rows);
    }

    pub fn validate(&self) -> Result<()> {
        if self.var_names.len() != self.n_vars {
            return Err(Error::MalformedProgram(format!(
                "{} names for {} variables",
                self.var_names.len(),
                self.n_vars
            )));
        }
        let check_expr = |e: &LinExpr, what: &str| -> Result<()> {
            if let Some(j) = e.max_index() {
                if j >= self.n_vars {
                    return Err(Error::MalformedProgram(format!(
                        "{what} references variable {j} of {}",
                        self.n_vars
                    )));
                }
            }
            if !e.constant.is_finite() || e.terms.iter().any(|t| !t.1.is_finite()) {
                return Err(Error::MalformedProgram(format!(
                    "{what} has non-finite data"
                )));
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for c in &self.constraints {
            match c.cone {
                Cone::Soc if c.rows.len() < 2 => {
                    return Err(Error::MalformedProgram(format!(
                        "second-order block '{}' has dimension {}",
                        c.label,
                        c.rows.len()
                    )))
                }
                Cone::Psd { dim } if c.rows.len() != psd_len(dim) => {
                    return Err(Error::MalformedProgram(format!(
                        "psd block '{}' of dim {dim} has {} rows",
                        c.label,
                        c.rows.len()
                    )))
                }
                _ => {}
            }
            if c.rows.is_empty() {
                return Err(Error::MalformedProgram(format!(
                    "block '{}' is empty",
                    c.label
                )));
            }
            for r in &c.rows {
                check_expr(r, &c.label)?;
            }
        }
        for &b in &self.binaries {
            if b >= self.n_vars {
                return Err(Error::MalformedProgram(format!(
                    "binary index {b} out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.iter().map(|c| c.rows.len()).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ConeProgram = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Largest scaled violation of any cone constraint at `x`.
    ///
    /// Each block's violation is divided by `max(1, largest summand)` so that
    /// big-M rows and unit rows are judged on the same relative footing.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| block_violation(c, x))
            .fold(0.0, f64::max)
    }

    pub fn violation_report(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.constraints
            .iter()
            .map(|c| (c.label.clone(), block_violation(c, x)))
            .collect()
    }
}

fn block_violation(c: &Constraint, x: &[f64]) -> f64 {
    let vals: Vec<f64> = c.rows.iter().map(|r| r.eval(x)).collect();
    let scale = c.rows.iter().map(|r| r.magnitude(x)).fold(1.0, f64::max);
    let raw = match c.cone {
        Cone::Zero => vals.iter().map(|v| v.abs()).fold(0.0, f64::max),
        Cone::Nonneg => vals.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
        Cone::Soc => {
            let norm = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - vals[0]).max(0.0)
        }
        Cone::Psd { dim } => {
            let m = unpack_psd(dim, &vals);
            let eig = m.symmetric_eigenvalues();
            (-eig.min()).max(0.0)
        }
    };
    raw / scale
}

/// Rebuilds the symmetric matrix from its scaled stacked lower triangle.
pub fn unpack_psd(dim: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for j in 0..dim {
        for i in j..dim {
            let val = if i == j { v[k] } else { v[k] / SQRT2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}
