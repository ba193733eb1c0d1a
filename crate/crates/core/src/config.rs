//! Tolerances and numeric knobs shared across modules.

use serde::{Deserialize, Serialize};

/// Central tolerance record. Defaults are the values every test assumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Equality residual accepted for occupation measures.
    pub feasibility: f64,
    /// Accepted deviation of probability rows from 1.
    pub normalization: f64,
    /// Policy denominators below this are treated as unvisited states.
    pub visitation: f64,
    /// Scaled cone violation accepted on a returned primal point.
    pub cone: f64,
    /// Distance below which a relaxed binary counts as integral.
    pub integrality: f64,
    /// Relative gap at which branch-and-bound stops.
    pub relative_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            normalization: 1e-9,
            visitation: 1e-12,
            cone: 1e-7,
            integrality: 1e-6,
            relative_gap: 1e-6,
        }
    }
}

pub const TOL: Tolerances = Tolerances {
    feasibility: 1e-8,
    normalization: 1e-9,
    visitation: 1e-12,
    cone: 1e-7,
    integrality: 1e-6,
    relative_gap: 1e-6,
};
