//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `x' S x` for a square matrix.
pub fn quad_form(s: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        if x[j] == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += s[(i, j)] * x[i];
        }
        acc += col * x[j];
    }
    acc
}

/// Builds a dense matrix from nested rows, checking that it is square.
pub fn square_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::dim(what, n, r.len()));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Lower Cholesky factor `L` with `S = L L'`. Rejects asymmetric input.
pub fn cholesky_lower(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::dim("covariance columns", s.nrows(), s.ncols()));
    }
    let scale = s.amax().max(1.0);
    for i in 0..s.nrows() {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Domain(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    nalgebra::Cholesky::new(s.clone())
        .map(|c| c.l())
        .ok_or(Error::CholeskyFailure)
}

/// `L' x` for lower-triangular `L`; `||L' x||` equals `sqrt(x' S x)`.
pub fn lt_times(l: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| (i..n).map(|j| l[(j, i)] * x[j]).sum())
        .collect()
}

/// `L x` for lower-triangular `L`.
pub fn l_times(l: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| (0..=i).map(|j| l[(i, j)] * x[j]).sum())
        .collect()
}
