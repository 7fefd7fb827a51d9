use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError, RIDGE_FACTOR};

/// Aggregation weights produced by [`optimal_weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub weights: Vec<f64>,
    /// A ridge term was added to the diagonal before inverting.
    pub regularized: bool,
    /// The solve failed even after regularization and uniform weights
    /// were substituted.
    pub fell_back_to_uniform: bool,
}

pub fn uniform_weights(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

/// Weights summing to one that minimise `AᵀCA`: `A = C⁻¹1 / (1ᵀC⁻¹1)`.
///
/// For a positive-definite `C` whose inverse has nonnegative row sums
/// this is the L1 normalisation of `C⁻¹1`. `C` is rescaled by its mean
/// diagonal before inversion, so the result does not depend on the
/// overall scale of `C`.
pub fn optimal_weights(c: &Matrix) -> Result<WeightSolution, NumericsError> {
    if !c.is_square() {
        return Err(NumericsError::NotSquare {
            rows: c.rows(),
            cols: c.cols(),
        });
    }
    let l = c.rows();
    if l == 0 {
        return Err(NumericsError::Empty);
    }
    if l == 1 {
        return Ok(WeightSolution {
            weights: vec![1.0],
            regularized: false,
            fell_back_to_uniform: false,
        });
    }
    let mean_diag = c.trace() / l as f64;
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
        mean_diag
    } else {
        c.max_abs()
    };
    let scaled = if scale > 0.0 { c.scale(1.0 / scale) } else { c.clone() };

    if let Some(w) = solve(&scaled) {
        return Ok(WeightSolution {
            weights: w,
            regularized: false,
            fell_back_to_uniform: false,
        });
    }
    let ridge = RIDGE_FACTOR * scaled.trace().abs().max(f64::MIN_POSITIVE) / l as f64;
    let mut ridged = scaled.clone();
    for i in 0..l {
        ridged[(i, i)] += ridge;
    }
    if let Some(w) = solve(&ridged) {
        return Ok(WeightSolution {
            weights: w,
            regularized: true,
            fell_back_to_uniform: false,
        });
    }
    log::warn!("covariance matrix is singular after ridge; using uniform weights");
    Ok(WeightSolution {
        weights: uniform_weights(l),
        regularized: true,
        fell_back_to_uniform: true,
    })
}

fn solve(c: &Matrix) -> Option<Vec<f64>> {
    let inv = c.inverse().ok()?;
    let b = inv.mul_vec(&vec![1.0; c.rows()]);
    let total: f64 = b.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    let mut w: Vec<f64> = b.iter().map(|v| v / total).collect();
    // absorb rounding so the weights sum to one exactly
    let drift = 1.0 - w.iter().sum::<f64>();
    let last = w.len() - 1;
    w[last] += drift;
    Some(w)
}
