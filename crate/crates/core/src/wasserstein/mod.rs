//! Order-1 Wasserstein balls around an empirical distribution.
//!
//! Full support leads to a big-M mixed-binary SOCP. Nonnegative support leads
//! to a biconvex program handled by alternating convex search. Both are
//! checked against an exact worst-case probability oracle that only needs
//! point-to-set distances and a scalar piecewise-linear minimization.

mod acs;
mod misocp;
mod oracle;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{RiskLevel, Support};
use crate::linalg::norm2;
use crate::{Error, Result};

pub use acs::{solve_biconvex_acs, AcsOptions, AcsOutcome, BiconvexProgram, DualStep};
pub use misocp::{build_misocp, solve_misocp_full, MisocpHandles, MisocpOptions, MisocpOutcome};
pub use oracle::{
    distances, nonneg_distance, nonneg_distance_dual, nonneg_distance_socp, projection_distance,
    wasserstein_worst_case_prob, worst_case_from_distances, worst_case_from_distances_grid,
    y_oracle,
};

/// Where a scenario matrix came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
}

/// `H` scenario reward vectors over the flattened state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub provenance: Option<Provenance>,
    /// Entries raised to zero when the set was clipped to the orthant.
    pub clipped: usize,
}

impl ScenarioSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidModel("scenario set is empty".into()));
        }
        let k = labels.len();
        for r in &rows {
            if r.len() != k {
                return Err(Error::dim("scenario length", k, r.len()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(
                    "scenario has a non-finite entry".into(),
                ));
            }
        }
        Ok(Self {
            rows,
            labels,
            provenance: None,
            clipped: 0,
        })
    }

    /// Unlabelled set; columns are named `c0, c1, ...`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        Self::new(rows, (0..k).map(|i| format!("c{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn max_norm(&self) -> f64 {
        self.rows.iter().map(|r| norm2(r)).fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Raises negative entries to zero and records how many were changed.
    pub fn clipped_to_orthant(&self) -> Self {
        let mut out = self.clone();
        let mut n = 0;
        for v in out.rows.iter_mut().flatten() {
            if *v < 0.0 {
                *v = 0.0;
                n += 1;
            }
        }
        out.clipped += n;
        out
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.rows = order.iter().map(|&i| self.rows[i].clone()).collect();
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let h = self.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for r in &self.rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b / h;
            }
        }
        m
    }

    /// Sample covariance with divisor `H`.
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let m = self.mean();
        let k = self.dim();
        let h = self.len() as f64;
        let mut c = nalgebra::DMatrix::zeros(k, k);
        for r in &self.rows {
            for i in 0..k {
                let di = r[i] - m[i];
                for j in 0..=i {
                    c[(i, j)] += di * (r[j] - m[j]) / h;
                }
            }
        }
        c.fill_upper_triangle_with_lower_triangle();
        c
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.labels)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let labels: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidModel(format!("scenario entry '{s}': {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(rows, labels)
    }
}

#[derive(Clone, Debug)]
pub struct WassersteinAmbiguity {
    pub theta: f64,
    pub epsilon: RiskLevel,
    pub scenarios: ScenarioSet,
    pub support: Support,
}

impl WassersteinAmbiguity {
    pub fn new(
        theta: f64,
        epsilon: RiskLevel,
        scenarios: ScenarioSet,
        support: Support,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!(
                "Wasserstein radius {theta} must be positive"
            )));
        }
        if support == Support::Nonnegative && scenarios.min_entry() < 0.0 {
            return Err(Error::Domain(
                "nonnegative support needs nonnegative scenarios; clip them first".into(),
            ));
        }
        Ok(Self {
            theta,
            epsilon,
            scenarios,
            support,
        })
    }

    pub fn h(&self) -> usize {
        self.scenarios.len()
    }
}

/// `M = theta / eps + 2 max_i ||xi_i||`.
pub fn big_m(a: &WassersteinAmbiguity) -> f64 {
    a.theta / a.epsilon.get() + 2.0 * a.scenarios.max_norm()
}
