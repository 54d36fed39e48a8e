//! Dense least squares via Householder QR.

use crate::{Error, Result};

/// Solution of `min ‖A c − b‖₂` for a row-major `rows × cols` matrix with
/// `rows >= cols`, together with the residual norm.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: Vec<f64>,
    pub residual: f64,
}

/// Solves the least-squares problem, failing when `A` is numerically
/// rank-deficient (|R_kk| below `rank_tol` times the largest column norm).
pub fn least_squares(
    a: &[f64],
    rows: usize,
    cols: usize,
    b: &[f64],
    rank_tol: f64,
) -> Result<LeastSquares> {
    if a.len() != rows * cols {
        return Err(Error::shape("least_squares matrix", rows * cols, a.len()));
    }
    if b.len() != rows {
        return Err(Error::shape("least_squares rhs", rows, b.len()));
    }
    if rows < cols {
        return Err(Error::SingularMixture(format!(
            "underdetermined system: {rows} equations for {cols} unknowns"
        )));
    }

    let mut r = a.to_vec();
    let mut qtb = b.to_vec();
    let scale = (0..cols)
        .map(|j| (0..rows).map(|i| r[i * cols + j].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::SingularMixture("zero matrix".into()));
    }

    for k in 0..cols {
        let norm = (k..rows).map(|i| r[i * cols + k].powi(2)).sum::<f64>().sqrt();
        if norm <= rank_tol * scale {
            return Err(Error::SingularMixture(format!(
                "rank deficient at column {k}"
            )));
        }
        let alpha = if r[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| r[i * cols + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * r[i * cols + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..rows {
                r[i * cols + j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..rows).map(|i| v[i - k] * qtb[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..rows {
            qtb[i] -= f * v[i - k];
        }
        if r[k * cols + k].abs() <= rank_tol * scale {
            return Err(Error::SingularMixture(format!(
                "rank deficient at column {k}"
            )));
        }
    }

    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let s: f64 = ((k + 1)..cols).map(|j| r[k * cols + j] * x[j]).sum();
        x[k] = (qtb[k] - s) / r[k * cols + k];
    }

    let residual = (0..rows)
        .map(|i| {
            let ax: f64 = (0..cols).map(|j| a[i * cols + j] * x[j]).sum();
            (ax - b[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt();

    Ok(LeastSquares {
        solution: x,
        residual,
    })
}
