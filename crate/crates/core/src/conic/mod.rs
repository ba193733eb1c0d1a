//! Conic program IR, continuous backend and branch-and-bound.

mod backend;
mod bnb;
mod ir;

pub use backend::{solve_continuous, solve_with_fixings, SolveOptions, SolveResult, SolveStatus};
pub use bnb::{relaxation, solve_misocp, BnbOptions};
pub use ir::{
    psd_index, psd_len, unpack_psd, Cone, ConeProgram, Constraint, LinExpr, Sense, Var, SQRT2,
};
