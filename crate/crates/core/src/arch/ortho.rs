//! Orthogonalization penalty between representation blocks.
//!
//! For representation `k` with first weight matrix `W^k` (rows = inputs),
//! `Wbar[k][j] = sum_u |W^k[j, u]|` measures how strongly input `j` enters it.
//! The penalty is `sum_j sum_{k<l} Wbar[k][j] * Wbar[l][j]`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn row_weights(matrices: &[ArrayView2<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = match matrices.first() {
        Some(m) => m.nrows(),
        None => return Ok(Vec::new()),
    };
    matrices
        .iter()
        .map(|m| {
            if m.nrows() != d {
                return Err(Error::DimensionMismatch {
                    what: "representation input rows",
                    expected: d,
                    actual: m.nrows(),
                });
            }
            Ok(m.rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum())
                .collect())
        })
        .collect()
}

pub fn ortho_penalty(first_weights: &[ArrayView2<f64>]) -> Result<f64> {
    let bars = row_weights(first_weights)?;
    let mut total = 0.0;
    for k in 0..bars.len() {
        for l in (k + 1)..bars.len() {
            total += bars[k].iter().zip(&bars[l]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total)
}

/// Subgradient of [`ortho_penalty`] with respect to each matrix
/// (`sign(0)` taken as 0).
pub fn ortho_gradient(first_weights: &[ArrayView2<f64>]) -> Result<Vec<Array2<f64>>> {
    let bars = row_weights(first_weights)?;
    let d = bars.first().map_or(0, Vec::len);
    let totals: Vec<f64> = (0..d).map(|j| bars.iter().map(|b| b[j]).sum()).collect();
    Ok(first_weights
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut g = Array2::zeros(m.raw_dim());
            for ((j, u), &w) in m.indexed_iter() {
                let others = totals[j] - bars[k][j];
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g[[j, u]] = sign * others;
            }
            g
        })
        .collect())
}
