//! Small dense linear algebra, the normal quantile, delta-method intervals
//! and minimum-variance aggregation weights.

mod eigen;
mod interval;
mod matrix;
mod quantile;
mod weights;

pub use eigen::{eigendecompose, is_symmetric, EigenDecomposition};
pub use interval::{delta_method_ci, interval_from_variance, ConfidenceInterval, FailureReason};
pub use matrix::{invert_matrix, Matrix};
pub use quantile::{erfc, normal_cdf, normal_pdf, normal_quantile, two_sided_multiplier};
pub use weights::{optimal_weights, uniform_weights, WeightSolution};

/// Pivots smaller than this make [`invert_matrix`] report a singular matrix.
pub const SINGULAR_PIVOT: f64 = 1e-12;
/// Variances down to `-NEGATIVE_VARIANCE_TOL` are treated as round-off.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;
/// Relative asymmetry below which a matrix takes the symmetric eigen path.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Ridge added to a singular covariance, as a multiple of `trace(C)/l`.
pub const RIDGE_FACTOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (no usable pivot in column {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("empty input")]
    Empty,
}

/// Rounds to `digits` significant decimal digits (non-finite values pass
/// through).
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(0.123456789123, 9), 0.123456789);
        assert_eq!(round_significant(-1234.5678912345, 9), -1234.56789);
        assert_eq!(round_significant(0.0, 9), 0.0);
        assert!(round_significant(f64::NAN, 9).is_nan());
    }
}
