//! Maximum-likelihood logistic regression by Newton-Raphson.

use nalgebra::{DMatrix, DVector};

use crate::classify::sigmoid;
use crate::error::{AfapeError, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

/// Fits `P(y = 1 | x) = sigmoid(b0 + b . x)`.
///
/// `x` is row-major with `dim` columns; the returned vector is
/// `[b0, b_1, ..., b_dim]`.
pub fn fit_logistic(x: &[f64], dim: usize, y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if n == 0 || x.len() != n * dim {
        return Err(AfapeError::Fit("empty or ragged design matrix".into()));
    }
    let p = dim + 1;
    let mut beta = DVector::<f64>::zeros(p);
    let mut row = vec![1.0; p];
    for _ in 0..MAX_ITER {
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for (i, &yi) in y.iter().enumerate() {
            row[1..].copy_from_slice(&x[i * dim..(i + 1) * dim]);
            let z: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let mu = sigmoid(z);
            let w = mu * (1.0 - mu);
            for a in 0..p {
                g[a] += row[a] * (yi - mu);
                for b in 0..=a {
                    h[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let chol = h
            .cholesky()
            .ok_or_else(|| AfapeError::Fit("singular information matrix (degenerate design)".into()))?;
        let step = chol.solve(&g);
        beta += &step;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(AfapeError::Fit("coefficients diverged".into()));
        }
        if step.amax() < TOL {
            return Ok(beta.iter().copied().collect());
        }
    }
    Err(AfapeError::Fit(format!(
        "Newton iterations did not converge in {MAX_ITER} steps (separable data?)"
    )))
}

pub fn predict_logistic(coef: &[f64], x: &[f64]) -> f64 {
    sigmoid(coef[0] + coef[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
}
