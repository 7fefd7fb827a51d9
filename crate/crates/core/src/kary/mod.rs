//! k-ary response-probability matrices for a worker triple.
//!
//! The joint tally of a triple's responses determines, up to an orthogonal
//! factor, the matrices `V_i = S_D^{1/2}·P_i`; conditioning on the third
//! worker's response pins the factor down. Intervals come from the delta
//! method with a central-difference Jacobian of the whole pipeline and the
//! multinomial covariance of the tally.

mod counts;
mod spectral;

pub use counts::{
    build_counts, counts_covariance, counts_quadratic_form, response_frequency_matrices,
    AttemptPattern, CountsTensor, FrequencyMatrices,
};
pub use spectral::{
    clamp_stochastic, diagonal_order, estimate_response_probabilities, normalize_rows,
    prob_estimate, recover_selectivity, ProbEstimate, ResponseProbEstimate, SliceDrop,
    SpectralConfig, SpectralDiagnostics,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ResponseDataset;
use crate::numerics::{interval_from_variance, ConfidenceInterval, FailureReason, Matrix};
use spectral::{finish, prob_estimate_tracked};

pub const DEFAULT_EPSILON: f64 = 0.01;

/// How intervals on `V_i` become intervals on the row-normalised `P_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowNormalization {
    /// Midpoints and half-widths both divided by the row sum of the
    /// midpoints.
    ScaleByRowSum,
    /// Delta method applied to `V(j,l) / Σ_l' V(j,l')` directly.
    DeltaOnRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaryConfig {
    pub confidence: f64,
    pub epsilon: f64,
    pub normalization: RowNormalization,
    pub spectral: SpectralConfig,
}

impl KaryConfig {
    pub fn new(confidence: f64) -> Self {
        Self {
            confidence,
            epsilon: DEFAULT_EPSILON,
            normalization: RowNormalization::DeltaOnRatio,
            spectral: SpectralConfig::default(),
        }
    }
}

/// Central-difference derivatives of `V_1..V_3` with respect to the
/// non-empty tally cells that feed the estimator.
#[derive(Debug, Clone)]
pub struct Jacobian {
    /// Flat cell indices that were perturbed.
    pub cells: Vec<usize>,
    /// `columns[c][i]` = `∂V_i / ∂Counts[cells[c]]`; `None` when a perturbed
    /// estimate failed.
    pub columns: Vec<Option<[Matrix; 3]>>,
}

impl Jacobian {
    pub fn unusable(&self) -> usize {
        self.columns.iter().filter(|c| c.is_none()).count()
    }

    /// Gradient of `V_i(a, b)` over the perturbed cells.
    pub fn gradient(&self, i: usize, a: usize, b: usize) -> Option<Vec<(usize, f64)>> {
        self.cells
            .iter()
            .zip(&self.columns)
            .map(|(&cell, col)| col.as_ref().map(|m| (cell, m[i][(a, b)])))
            .collect()
    }
}

/// Cells with at least two attempting workers and a positive count: the
/// only cells the estimator reads whose variance is nonzero.
pub fn jacobian_cells(counts: &CountsTensor) -> Vec<usize> {
    (0..counts.as_slice().len())
        .filter(|&f| {
            let (a, b, c) = counts.cell(f);
            let attempted = usize::from(a > 0) + usize::from(b > 0) + usize::from(c > 0);
            attempted >= 2 && counts.as_slice()[f] > 0.0
        })
        .collect()
}

/// Base estimate plus its numerical Jacobian at step `epsilon`.
///
/// Perturbed runs reuse the base run's slice set and align their rows to
/// the base rows, so the derivative is taken along a single smooth branch.
pub fn numerical_jacobian(
    counts: &CountsTensor,
    epsilon: f64,
    cfg: &SpectralConfig,
) -> Result<(ProbEstimate, Jacobian), FailureReason> {
    let (base, reference) = prob_estimate_tracked(counts, cfg, None)?;
    let cells = jacobian_cells(counts);
    let columns = cells
        .par_iter()
        .map(|&flat| {
            let (a, b, c) = counts.cell(flat);
            let mut plus = counts.clone();
            plus.add(a, b, c, epsilon);
            let mut minus = counts.clone();
            minus.add(a, b, c, -epsilon);
            let vp = prob_estimate_tracked(&plus, cfg, Some(&reference)).ok()?.0.v;
            let vm = prob_estimate_tracked(&minus, cfg, Some(&reference)).ok()?.0.v;
            let d = |i: usize| vp[i].sub(&vm[i]).scale(0.5 / epsilon);
            Some([d(0), d(1), d(2)])
        })
        .collect();
    Ok((base, Jacobian { cells, columns }))
}

/// Per-triple result: point estimates and a `k × k` interval grid per
/// worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaryReport {
    /// Worker identifiers when the report came from a dataset.
    pub workers: Vec<String>,
    pub arity: usize,
    pub confidence: f64,
    pub estimate: Option<ResponseProbEstimate>,
    /// `intervals[i][a][b]` covers `P_i(a, b)`.
    pub intervals: Vec<Vec<Vec<ConfidenceInterval>>>,
    /// Same layout, for `V_i = S_D^{1/2}·P_i`.
    pub v_intervals: Vec<Vec<Vec<ConfidenceInterval>>>,
    pub failure: Option<FailureReason>,
    pub unusable_cells: usize,
}

impl KaryReport {
    fn failed(k: usize, confidence: f64, reason: FailureReason) -> Self {
        let grid = vec![vec![vec![ConfidenceInterval::failed(confidence, reason); k]; k]; 3];
        Self {
            workers: Vec::new(),
            arity: k,
            confidence,
            estimate: None,
            intervals: grid.clone(),
            v_intervals: grid,
            failure: Some(reason),
            unusable_cells: 0,
        }
    }

    /// Every interval in the `P` grids, worker-major.
    pub fn all_intervals(&self) -> impl Iterator<Item = (usize, usize, usize, &ConfidenceInterval)> {
        self.intervals.iter().enumerate().flat_map(|(i, g)| {
            g.iter()
                .enumerate()
                .flat_map(move |(a, row)| row.iter().enumerate().map(move |(b, ci)| (i, a, b, ci)))
        })
    }
}

fn interval(estimate: f64, variance: f64, confidence: f64) -> ConfidenceInterval {
    interval_from_variance(estimate, variance, confidence)
        .unwrap_or(ConfidenceInterval::failed(confidence, FailureReason::NumericalFailure))
}

/// Point estimates and delta-method intervals for all three workers.
pub fn kary_confidence_intervals(counts: &CountsTensor, cfg: &KaryConfig) -> KaryReport {
    let k = counts.arity();
    let c = cfg.confidence;
    let (base, jac) = match numerical_jacobian(counts, cfg.epsilon, &cfg.spectral) {
        Ok(v) => v,
        Err(r) => return KaryReport::failed(k, c, r),
    };
    let estimate = match finish(base) {
        Ok(e) => e,
        Err(r) => return KaryReport::failed(k, c, r),
    };
    let unusable = jac.unusable();
    if unusable > 0 {
        let mut report = KaryReport::failed(k, c, FailureReason::JacobianUnusable);
        report.estimate = Some(estimate);
        report.unusable_cells = unusable;
        return report;
    }
    let mut intervals = Vec::with_capacity(3);
    let mut v_intervals = Vec::with_capacity(3);
    for i in 0..3 {
        let v = &estimate.v[i];
        let grads: Vec<Vec<Vec<(usize, f64)>>> = (0..k)
            .map(|a| (0..k).map(|b| jac.gradient(i, a, b).expect("all columns usable")).collect())
            .collect();
        let mut pg = Vec::with_capacity(k);
        let mut vg = Vec::with_capacity(k);
        for a in 0..k {
            let row_sum: f64 = v.row(a).iter().sum();
            let mut prow = Vec::with_capacity(k);
            let mut vrow = Vec::with_capacity(k);
            for b in 0..k {
                let var_v = counts_quadratic_form(counts, &grads[a][b]);
                let vci = interval(v[(a, b)], var_v, c);
                vrow.push(vci);
                if !(row_sum.is_finite() && row_sum > 1e-12) {
                    prow.push(ConfidenceInterval::failed(c, FailureReason::DegenerateSelectivity));
                    continue;
                }
                let p = v[(a, b)] / row_sum;
                let pci = match cfg.normalization {
                    RowNormalization::ScaleByRowSum => match vci {
                        ConfidenceInterval::Valid { half_width, .. } => ConfidenceInterval::Valid {
                            estimate: p,
                            half_width: half_width / row_sum,
                            confidence: c,
                        },
                        failed => failed,
                    },
                    RowNormalization::DeltaOnRatio => {
                        let g: Vec<(usize, f64)> = (0..jac.cells.len())
                            .map(|x| {
                                let d_row: f64 = (0..k).map(|l| grads[a][l][x].1).sum();
                                (grads[a][b][x].0, (grads[a][b][x].1 - p * d_row) / row_sum)
                            })
                            .collect();
                        interval(p, counts_quadratic_form(counts, &g), c)
                    }
                };
                prow.push(pci);
            }
            pg.push(prow);
            vg.push(vrow);
        }
        intervals.push(pg);
        v_intervals.push(vg);
    }
    KaryReport {
        workers: Vec::new(),
        arity: k,
        confidence: c,
        estimate: Some(estimate),
        intervals,
        v_intervals,
        failure: None,
        unusable_cells: 0,
    }
}

/// [`kary_confidence_intervals`] on the tally of `triple` in `ds`.
pub fn evaluate_kary_triple(ds: &ResponseDataset, triple: (usize, usize, usize), cfg: &KaryConfig) -> KaryReport {
    let mut report = kary_confidence_intervals(&build_counts(ds, triple), cfg);
    report.workers = [triple.0, triple.1, triple.2]
        .iter()
        .map(|&w| ds.worker_name(w).to_owned())
        .collect();
    report
}

/// Worker triples (in index order) sharing at least `min_common` tasks,
/// at most `limit` of them.
pub fn triples_with_overlap(ds: &ResponseDataset, min_common: usize, limit: usize) -> Vec<(usize, usize, usize)> {
    let m = ds.num_workers();
    let mut out = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if ds.pair_overlap(a, b) < min_common {
                continue;
            }
            for c in b + 1..m {
                if ds.triple_overlap(a, b, c) >= min_common {
                    out.push((a, b, c));
                    if out.len() == limit {
                        return out;
                    }
                }
            }
        }
    }
    out
}
