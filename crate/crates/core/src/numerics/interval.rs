use serde::{Deserialize, Serialize};

use super::{two_sided_multiplier, Matrix, NumericsError, NEGATIVE_VARIANCE_TOL};

/// Why an estimate could not be produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NegativeVariance,
    AgreementAtOrBelowHalf,
    NegativeRadicand,
    InsufficientOverlap,
    InsufficientConnectivity,
    AllTriplesFailed,
    NonInvertibleFrequencyMatrix,
    NegativeSpectrum,
    NoUsableSlices,
    DegenerateSelectivity,
    JacobianUnusable,
    NumericalFailure,
}

impl FailureReason {
    pub fn describe(self) -> &'static str {
        match self {
            Self::NegativeVariance => "negative variance",
            Self::AgreementAtOrBelowHalf => "agreement at or below 1/2",
            Self::NegativeRadicand => "negative value under the square root",
            Self::InsufficientOverlap => "a worker pair has no task in common",
            Self::InsufficientConnectivity => "no pair of co-workers shares tasks with this worker",
            Self::AllTriplesFailed => "every triple estimate failed",
            Self::NonInvertibleFrequencyMatrix => "non-invertible response frequency matrix",
            Self::NegativeSpectrum => "negative eigenvalue in the agreement product",
            Self::NoUsableSlices => "every conditional slice was rejected",
            Self::DegenerateSelectivity => "a recovered row sums to zero",
            Self::JacobianUnusable => "a perturbed estimate failed",
            Self::NumericalFailure => "numerical routine did not converge",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.describe())
    }
}

/// Symmetric interval `estimate ± half_width`, or a failure record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConfidenceInterval {
    Valid {
        estimate: f64,
        half_width: f64,
        confidence: f64,
    },
    Failed {
        confidence: f64,
        reason: FailureReason,
    },
}

impl ConfidenceInterval {
    pub fn failed(confidence: f64, reason: FailureReason) -> Self {
        Self::Failed { confidence, reason }
    }

    pub fn confidence(&self) -> f64 {
        match *self {
            Self::Valid { confidence, .. } | Self::Failed { confidence, .. } => confidence,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Self::Failed { .. })
    }

    pub fn failure(&self) -> Option<FailureReason> {
        match *self {
            Self::Failed { reason, .. } => Some(reason),
            Self::Valid { .. } => None,
        }
    }

    pub fn estimate(&self) -> Option<f64> {
        match *self {
            Self::Valid { estimate, .. } => Some(estimate),
            Self::Failed { .. } => None,
        }
    }

    pub fn half_width(&self) -> Option<f64> {
        match *self {
            Self::Valid { half_width, .. } => Some(half_width),
            Self::Failed { .. } => None,
        }
    }

    pub fn lower(&self) -> Option<f64> {
        Some(self.estimate()? - self.half_width()?)
    }

    pub fn upper(&self) -> Option<f64> {
        Some(self.estimate()? + self.half_width()?)
    }

    /// Full width `2 · half_width`.
    pub fn width(&self) -> Option<f64> {
        self.half_width().map(|h| 2.0 * h)
    }

    /// Closed-interval membership; `None` for a failed interval.
    pub fn contains(&self, value: f64) -> Option<bool> {
        Some(self.lower()? <= value && value <= self.upper()?)
    }
}

/// First-order (delta-method) interval for `f(X)` given `∇f` and `Cov(X)`.
///
/// The half-width is `|z_{(1-c)/2}| · sqrt(gᵀ Σ g)`. Variances in
/// `[-NEGATIVE_VARIANCE_TOL, 0)` are treated as round-off and clamped to
/// zero; anything more negative yields a failed interval.
pub fn delta_method_ci(
    estimate: f64,
    gradient: &[f64],
    cov: &Matrix,
    confidence: f64,
) -> Result<ConfidenceInterval, NumericsError> {
    if cov.rows() != gradient.len() || cov.cols() != gradient.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: gradient.len(),
            found: cov.rows(),
        });
    }
    let variance = cov.quadratic_form(gradient);
    interval_from_variance(estimate, variance, confidence)
}

/// Shared tail of [`delta_method_ci`] for callers that already hold the
/// quadratic form.
pub fn interval_from_variance(
    estimate: f64,
    variance: f64,
    confidence: f64,
) -> Result<ConfidenceInterval, NumericsError> {
    let z = two_sided_multiplier(confidence)?;
    if !variance.is_finite() || !estimate.is_finite() {
        return Ok(ConfidenceInterval::failed(
            confidence,
            FailureReason::NumericalFailure,
        ));
    }
    if variance < -NEGATIVE_VARIANCE_TOL {
        return Ok(ConfidenceInterval::failed(
            confidence,
            FailureReason::NegativeVariance,
        ));
    }
    Ok(ConfidenceInterval::Valid {
        estimate,
        half_width: z * variance.max(0.0).sqrt(),
        confidence,
    })
}
