//! Binary error-rate estimation from pairwise agreement.
//!
//! A worker triple `(i, j1, j2)` gives a closed-form estimate of worker
//! `i`'s error rate from the three agreement rates. Triples built from
//! disjoint co-worker pairs are then combined with weights chosen to
//! minimise the variance of the aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ResponseDataset;
use crate::numerics::{
    interval_from_variance, optimal_weights, uniform_weights, ConfidenceInterval, FailureReason,
    Matrix,
};

/// How triple estimates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThreeWorker,
    MWorkerUniform,
    MWorkerOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryConfig {
    pub confidence: f64,
    pub weighting: Weighting,
    /// Minimum number of shared tasks for a pair to be used by the greedy
    /// pairing.
    pub min_overlap: usize,
}

impl BinaryConfig {
    pub fn new(confidence: f64, weighting: Weighting) -> Self {
        Self {
            confidence,
            weighting,
            min_overlap: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BinaryError {
    #[error("need at least 3 workers, found {0}")]
    TooFewWorkers(usize),
    #[error("confidence {0} is outside (0, 1)")]
    BadConfidence(f64),
}

fn check_domain(q: [f64; 3]) -> Result<(), FailureReason> {
    if q.iter().any(|&x| !x.is_finite()) {
        return Err(FailureReason::NumericalFailure);
    }
    if q.iter().any(|&x| 2.0 * x - 1.0 <= 0.0) {
        return Err(FailureReason::AgreementAtOrBelowHalf);
    }
    Ok(())
}

/// Unclamped `½ − ½·√r` together with the radicand `r`.
fn raw_error_rate(q12: f64, q13: f64, q23: f64) -> Result<(f64, f64), FailureReason> {
    check_domain([q12, q13, q23])?;
    let r = (2.0 * q12 - 1.0) * (2.0 * q13 - 1.0) / (2.0 * q23 - 1.0);
    if r < 0.0 {
        return Err(FailureReason::NegativeRadicand);
    }
    Ok((0.5 - 0.5 * r.sqrt(), r))
}

/// Error rate of worker 1 from the agreement rates of the three pairs.
///
/// A radicand above one (estimate below zero) is clamped to 0.
pub fn error_rate_from_agreements(q12: f64, q13: f64, q23: f64) -> Result<f64, FailureReason> {
    raw_error_rate(q12, q13, q23).map(|(p, _)| p.max(0.0))
}

/// Partial derivatives of [`error_rate_from_agreements`] w.r.t. `q12`,
/// `q13` and `q23`.
pub fn f_derivatives(q12: f64, q13: f64, q23: f64) -> Result<[f64; 3], FailureReason> {
    check_domain([q12, q13, q23])?;
    let (a, b, c) = (q12 - 0.5, q13 - 0.5, q23 - 0.5);
    Ok([
        -(b / (8.0 * a * c)).sqrt(),
        -(a / (8.0 * b * c)).sqrt(),
        (a * b / (8.0 * c * c * c)).sqrt(),
    ])
}

/// Overlap counts and agreement rates for an ordered triple `(1, 2, 3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleStats {
    pub c12: usize,
    pub c13: usize,
    pub c23: usize,
    pub c123: usize,
    pub q12: f64,
    pub q13: f64,
    pub q23: f64,
}

impl TripleStats {
    /// Reads the triple `(a, b, c)` from a dataset; `None` if a pair shares
    /// no task.
    pub fn from_dataset(ds: &ResponseDataset, a: usize, b: usize, c: usize) -> Option<Self> {
        Some(Self {
            c12: ds.pair_overlap(a, b),
            c13: ds.pair_overlap(a, c),
            c23: ds.pair_overlap(b, c),
            c123: ds.triple_overlap(a, b, c),
            q12: ds.agreement_rate(a, b)?,
            q13: ds.agreement_rate(a, c)?,
            q23: ds.agreement_rate(b, c)?,
        })
    }

    /// Full-overlap statistics for regular data with `n` tasks.
    pub fn regular(n: usize, q12: f64, q13: f64, q23: f64) -> Self {
        Self {
            c12: n,
            c13: n,
            c23: n,
            c123: n,
            q12,
            q13,
            q23,
        }
    }

    /// Error-rate estimates of all three workers (clamped at 0).
    pub fn error_rates(&self) -> Result<[f64; 3], FailureReason> {
        Ok([
            error_rate_from_agreements(self.q12, self.q13, self.q23)?,
            error_rate_from_agreements(self.q12, self.q23, self.q13)?,
            error_rate_from_agreements(self.q13, self.q23, self.q12)?,
        ])
    }
}

/// Covariance of `(Q12, Q13, Q23)` given plug-in error rates `p`.
///
/// Diagonal `q(1−q)/c`; two rates sharing worker `j` covary through
/// `c123·p_j(1−p_j)(2q_ik−1)/(c_ij·c_jk)`. With all counts equal to `n`
/// this is the regular-data covariance.
pub fn agreement_covariances(s: &TripleStats, p: [f64; 3]) -> Matrix {
    let var = |q: f64, c: usize| q * (1.0 - q) / c as f64;
    let shared = |pj: f64, q_other: f64, ca: usize, cb: usize| {
        if s.c123 == 0 {
            0.0
        } else {
            s.c123 as f64 * pj * (1.0 - pj) * (2.0 * q_other - 1.0) / (ca as f64 * cb as f64)
        }
    };
    let c12_13 = shared(p[0], s.q23, s.c12, s.c13);
    let c12_23 = shared(p[1], s.q13, s.c12, s.c23);
    let c13_23 = shared(p[2], s.q12, s.c13, s.c23);
    Matrix::from_rows(&[
        [var(s.q12, s.c12), c12_13, c12_23],
        [c12_13, var(s.q13, s.c13), c13_23],
        [c12_23, c13_23, var(s.q23, s.c23)],
    ])
}

/// Linearised estimate of worker `i` from one triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleFit {
    pub p_hat: f64,
    pub dev: f64,
    pub d_i_j1: f64,
    pub d_i_j2: f64,
    /// Stored for completeness; the cross-triple covariance never uses it.
    pub d_j1_j2: f64,
    /// `(q_i_j1, q_i_j2, q_j1_j2)`.
    pub q: [f64; 3],
    /// The raw estimate was negative and clamped to 0.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleEstimate {
    /// `(i, j1, j2)` as dataset worker indices; `i` is the evaluated worker.
    pub triple: (usize, usize, usize),
    pub fit: Option<TripleFit>,
    pub failure: Option<FailureReason>,
}

impl TripleEstimate {
    fn failed(triple: (usize, usize, usize), reason: FailureReason) -> Self {
        Self {
            triple,
            fit: None,
            failure: Some(reason),
        }
    }
}

/// Estimate and interval for worker 1 of `stats`.
pub fn evaluate_triple_stats(
    triple: (usize, usize, usize),
    stats: &TripleStats,
    confidence: f64,
) -> (TripleEstimate, ConfidenceInterval) {
    let fail = |r| {
        (
            TripleEstimate::failed(triple, r),
            ConfidenceInterval::failed(confidence, r),
        )
    };
    let (raw, _) = match raw_error_rate(stats.q12, stats.q13, stats.q23) {
        Ok(v) => v,
        Err(r) => return fail(r),
    };
    let p = match stats.error_rates() {
        Ok(p) => p,
        Err(r) => return fail(r),
    };
    let d = match f_derivatives(stats.q12, stats.q13, stats.q23) {
        Ok(d) => d,
        Err(r) => return fail(r),
    };
    let cov = agreement_covariances(stats, p);
    let variance = cov.quadratic_form(&d);
    let ci = match interval_from_variance(p[0], variance, confidence) {
        Ok(ci) => ci,
        Err(_) => return fail(FailureReason::NumericalFailure),
    };
    if let Some(r) = ci.failure() {
        return fail(r);
    }
    let fit = TripleFit {
        p_hat: p[0],
        dev: variance.max(0.0).sqrt(),
        d_i_j1: d[0],
        d_i_j2: d[1],
        d_j1_j2: d[2],
        q: [stats.q12, stats.q13, stats.q23],
        clamped: raw < 0.0,
    };
    (
        TripleEstimate {
            triple,
            fit: Some(fit),
            failure: None,
        },
        ci,
    )
}

/// Evaluates worker `i` of the triple `(i, j1, j2)`. Failures are carried
/// in the result, never raised.
pub fn evaluate_triple(
    ds: &ResponseDataset,
    triple: (usize, usize, usize),
    confidence: f64,
) -> (TripleEstimate, ConfidenceInterval) {
    let (i, j1, j2) = triple;
    match TripleStats::from_dataset(ds, i, j1, j2) {
        Some(stats) => evaluate_triple_stats(triple, &stats, confidence),
        None => (
            TripleEstimate::failed(triple, FailureReason::InsufficientOverlap),
            ConfidenceInterval::failed(confidence, FailureReason::InsufficientOverlap),
        ),
    }
}

/// Disjoint co-worker pairs for worker `i`.
///
/// Other workers are sorted by overlap with `i` (descending, ties by
/// index). The head of the list is paired with the first later worker that
/// shares at least `min_overlap` tasks with both `i` and the head; a head
/// with no partner is skipped.
pub fn greedy_pairs(
    ds: &ResponseDataset,
    i: usize,
    min_overlap: usize,
) -> Result<Vec<(usize, usize)>, FailureReason> {
    let min_overlap = min_overlap.max(1);
    let mut pool: Vec<(usize, usize)> = (0..ds.num_workers())
        .filter(|&w| w != i)
        .map(|w| (w, ds.pair_overlap(i, w)))
        .filter(|&(_, c)| c >= min_overlap)
        .collect();
    pool.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pool: Vec<usize> = pool.into_iter().map(|(w, _)| w).collect();
    let mut pairs = Vec::new();
    while !pool.is_empty() {
        let head = pool.remove(0);
        if let Some(pos) = pool
            .iter()
            .position(|&w| ds.pair_overlap(head, w) >= min_overlap)
        {
            pairs.push((head, pool.remove(pos)));
        }
    }
    if pairs.is_empty() {
        Err(FailureReason::InsufficientConnectivity)
    } else {
        Ok(pairs)
    }
}

/// Covariance between triple estimates for the same worker, with the
/// overlap lookups supplied by the caller.
///
/// `c2(a, b)`, `c3(a, b, c)` are co-attempt counts and `q(a, b)` the
/// agreement rate (only consulted when `c3 > 0`).
pub fn cross_triple_covariances_with(
    triples: &[TripleEstimate],
    p_i: f64,
    c2: impl Fn(usize, usize) -> usize,
    c3: impl Fn(usize, usize, usize) -> usize,
    q: impl Fn(usize, usize) -> Option<f64>,
) -> Matrix {
    let l = triples.len();
    let fits: Vec<&TripleFit> = triples
        .iter()
        .map(|t| t.fit.as_ref().expect("cross-triple covariance needs successful triples"))
        .collect();
    let mut c = Matrix::zeros(l, l);
    for a in 0..l {
        c[(a, a)] = fits[a].dev * fits[a].dev;
        let (i, j1, j2) = triples[a].triple;
        for b in a + 1..l {
            let (i2, j3, j4) = triples[b].triple;
            debug_assert_eq!(i, i2, "triples must share the evaluated worker");
            let mut total = 0.0;
            for (j, dj) in [(j1, fits[a].d_i_j1), (j2, fits[a].d_i_j2)] {
                for (jp, djp) in [(j3, fits[b].d_i_j1), (j4, fits[b].d_i_j2)] {
                    let shared = c3(i, j, jp);
                    if shared == 0 {
                        continue;
                    }
                    let Some(qjj) = (if j == jp { Some(1.0) } else { q(j, jp) }) else {
                        continue;
                    };
                    let cov = shared as f64 * p_i * (1.0 - p_i) * (2.0 * qjj - 1.0)
                        / (c2(i, j) as f64 * c2(i, jp) as f64);
                    total += dj * djp * cov;
                }
            }
            c[(a, b)] = total;
            c[(b, a)] = total;
        }
    }
    c
}

/// Covariance matrix of the (successful) triple estimates for one worker,
/// using the dataset's overlaps and agreement rates.
pub fn cross_triple_covariances(ds: &ResponseDataset, triples: &[TripleEstimate], p_i: f64) -> Matrix {
    cross_triple_covariances_with(
        triples,
        p_i,
        |a, b| ds.pair_overlap(a, b),
        |a, b, c| ds.triple_overlap(a, b, c),
        |a, b| ds.agreement_rate(a, b),
    )
}

/// Per-worker outcome of the aggregated estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker: String,
    pub worker_index: usize,
    pub interval: ConfidenceInterval,
    pub triples_used: usize,
    pub triples_failed: usize,
    pub weights: Vec<f64>,
    pub method: Option<Method>,
    /// The aggregate left `[0, 1]` and was clamped.
    pub clamped: bool,
    /// The weight solve needed a ridge term or fell back to uniform.
    pub regularized: bool,
    pub triples: Vec<TripleEstimate>,
}

impl WorkerReport {
    fn failed(ds: &ResponseDataset, i: usize, confidence: f64, reason: FailureReason) -> Self {
        Self {
            worker: ds.worker_name(i).to_owned(),
            worker_index: i,
            interval: ConfidenceInterval::failed(confidence, reason),
            triples_used: 0,
            triples_failed: 0,
            weights: Vec::new(),
            method: None,
            clamped: false,
            regularized: false,
            triples: Vec::new(),
        }
    }
}

/// Error-rate interval for worker `i` aggregated over greedy triples.
pub fn evaluate_worker(ds: &ResponseDataset, i: usize, config: &BinaryConfig) -> WorkerReport {
    let confidence = config.confidence;
    let pairs = match greedy_pairs(ds, i, config.min_overlap) {
        Ok(p) => p,
        Err(r) => return WorkerReport::failed(ds, i, confidence, r),
    };
    let all: Vec<TripleEstimate> = pairs
        .iter()
        .map(|&(a, b)| evaluate_triple(ds, (i, a, b), confidence).0)
        .collect();
    let used: Vec<TripleEstimate> = all.iter().filter(|t| t.fit.is_some()).copied().collect();
    let failed = all.len() - used.len();
    if used.is_empty() {
        let mut report = WorkerReport::failed(ds, i, confidence, FailureReason::AllTriplesFailed);
        report.triples_failed = failed;
        report.triples = all;
        return report;
    }
    let estimates: Vec<f64> = used.iter().map(|t| t.fit.unwrap().p_hat).collect();
    let l = used.len();
    let p_bar = estimates.iter().sum::<f64>() / l as f64;
    let cov = cross_triple_covariances(ds, &used, p_bar);

    let (weights, regularized, method) = if l == 1 {
        (vec![1.0], false, Method::ThreeWorker)
    } else {
        match config.weighting {
            Weighting::Uniform => (uniform_weights(l), false, Method::MWorkerUniform),
            Weighting::Optimal => match optimal_weights(&cov) {
                Ok(sol) => (sol.weights, sol.regularized, Method::MWorkerOptimal),
                Err(_) => (uniform_weights(l), true, Method::MWorkerOptimal),
            },
        }
    };
    let raw: f64 = weights.iter().zip(&estimates).map(|(a, p)| a * p).sum();
    let estimate = raw.clamp(0.0, 1.0);
    let interval = interval_from_variance(estimate, cov.quadratic_form(&weights), confidence)
        .unwrap_or(ConfidenceInterval::failed(confidence, FailureReason::NumericalFailure));
    WorkerReport {
        worker: ds.worker_name(i).to_owned(),
        worker_index: i,
        interval,
        triples_used: l,
        triples_failed: failed,
        weights,
        method: Some(method),
        clamped: estimate != raw,
        regularized,
        triples: all,
    }
}

/// [`evaluate_worker`] for every worker, in worker-index order.
pub fn evaluate_all(ds: &ResponseDataset, config: &BinaryConfig) -> Result<Vec<WorkerReport>, BinaryError> {
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(BinaryError::BadConfidence(config.confidence));
    }
    if ds.num_workers() < 3 {
        return Err(BinaryError::TooFewWorkers(ds.num_workers()));
    }
    Ok((0..ds.num_workers())
        .into_par_iter()
        .map(|i| evaluate_worker(ds, i, config))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetBuilder;
    use proptest::prelude::*;

    fn agreement(p: f64, pp: f64) -> f64 {
        p * pp + (1.0 - p) * (1.0 - pp)
    }

    #[test]
    fn perfect_agreement_gives_zero() {
        assert_eq!(error_rate_from_agreements(1.0, 1.0, 1.0), Ok(0.0));
    }

    #[test]
    fn symmetric_case() {
        let p = error_rate_from_agreements(0.82, 0.82, 0.82).unwrap();
        assert!((p - 0.1).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_case_matches_forward_root() {
        let p = error_rate_from_agreements(0.82, 0.82, 0.90).unwrap();
        assert!((p - 0.142_23).abs() < 1e-5);
        // forward model: q23 = 0.9 with p2 = p3 forces p2 = (1 - sqrt(0.8)) / 2,
        // then q12 = 0.82 pins p1 by bisection
        let p2 = (1.0 - 0.8f64.sqrt()) / 2.0;
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if agreement(mid, p2) > 0.82 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((p - lo).abs() < 1e-12);
    }

    #[test]
    fn domain_guard() {
        assert_eq!(
            error_rate_from_agreements(0.5, 0.8, 0.8),
            Err(FailureReason::AgreementAtOrBelowHalf)
        );
        assert_eq!(
            f_derivatives(0.9, 0.3, 0.8),
            Err(FailureReason::AgreementAtOrBelowHalf)
        );
    }

    #[test]
    fn radicand_above_one_clamps() {
        let stats = TripleStats::regular(100, 0.9, 0.9, 0.8);
        let (est, ci) = evaluate_triple_stats((0, 1, 2), &stats, 0.9);
        let fit = est.fit.unwrap();
        assert!(fit.clamped);
        assert_eq!(fit.p_hat, 0.0);
        assert!(fit.dev > 0.0);
        assert_eq!(ci.estimate(), Some(0.0));
    }

    #[test]
    fn derivatives_at_symmetric_point() {
        let d = f_derivatives(0.82, 0.82, 0.82).unwrap();
        for (got, want) in d.iter().zip([-0.625, -0.625, 0.625]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_first_two_swaps_derivatives() {
        let a = f_derivatives(0.7, 0.9, 0.8).unwrap();
        let b = f_derivatives(0.9, 0.7, 0.8).unwrap();
        assert!((a[0] - b[1]).abs() < 1e-15);
        assert!((a[1] - b[0]).abs() < 1e-15);
        assert!((a[2] - b[2]).abs() < 1e-15);
    }

    #[test]
    fn covariance_diagonal_and_disjoint() {
        let mut s = TripleStats::regular(50, 0.82, 0.82, 0.82);
        let c = agreement_covariances(&s, [0.1; 3]);
        assert!((c[(0, 0)] - 0.002952).abs() < 1e-15);
        s.c123 = 0;
        let c = agreement_covariances(&s, [0.1; 3]);
        assert_eq!((c[(0, 1)], c[(0, 2)], c[(1, 2)]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn regular_covariance_matches_full_overlap_form() {
        // full overlap: Cov(Q12, Q13) = p1(1-p1)(2q23-1)/n
        let (p, n) = ([0.1, 0.2, 0.3], 80usize);
        let q = [agreement(p[0], p[1]), agreement(p[0], p[2]), agreement(p[1], p[2])];
        let c = agreement_covariances(&TripleStats::regular(n, q[0], q[1], q[2]), p);
        let nf = n as f64;
        let expected = Matrix::from_rows(&[
            [q[0] * (1.0 - q[0]) / nf, p[0] * (1.0 - p[0]) * (2.0 * q[2] - 1.0) / nf, p[1] * (1.0 - p[1]) * (2.0 * q[1] - 1.0) / nf],
            [p[0] * (1.0 - p[0]) * (2.0 * q[2] - 1.0) / nf, q[1] * (1.0 - q[1]) / nf, p[2] * (1.0 - p[2]) * (2.0 * q[0] - 1.0) / nf],
            [p[1] * (1.0 - p[1]) * (2.0 * q[1] - 1.0) / nf, p[2] * (1.0 - p[2]) * (2.0 * q[0] - 1.0) / nf, q[2] * (1.0 - q[2]) / nf],
        ]);
        assert!(c.max_abs_diff(&expected) < 1e-18);
    }

    fn dataset_from(rows: &[(&str, &[(usize, u16)])]) -> ResponseDataset {
        let mut b = DatasetBuilder::with_arity(2);
        for (w, resp) in rows {
            for &(t, l) in *resp {
                b.add(&format!("t{t}"), w, l.into(), 0).unwrap();
            }
        }
        b.build().unwrap()
    }

    /// Worker `w` attends tasks in `range`, answering 1 (no disagreement).
    fn span(range: std::ops::Range<usize>) -> Vec<(usize, u16)> {
        range.map(|t| (t, 1)).collect()
    }

    #[test]
    fn greedy_trace() {
        // overlaps with w1: w2=90, w3=80, w4=70, w5=60, all cross overlaps >= 1
        let (a, b, c, d, e) = (span(0..100), span(0..90), span(0..80), span(0..70), span(0..60));
        let ds = dataset_from(&[("w1", &a), ("w5", &e), ("w4", &d), ("w3", &c), ("w2", &b)]);
        let pairs = greedy_pairs(&ds, 0, 1).unwrap();
        let named: Vec<_> = pairs.iter().map(|&(x, y)| (ds.worker_name(x), ds.worker_name(y))).collect();
        assert_eq!(named, vec![("w2", "w3"), ("w4", "w5")]);
    }

    #[test]
    fn greedy_three_workers_and_skip() {
        let all = span(0..10);
        let ds = dataset_from(&[("a", &all), ("b", &all), ("c", &all)]);
        assert_eq!(greedy_pairs(&ds, 1, 1).unwrap(), vec![(0, 2)]);

        // w2 overlaps w1 only, so it is skipped and w3/w4 are paired
        let (w1, w2, w3, w4) = (span(0..100), span(0..50), span(50..100), span(60..100));
        let ds = dataset_from(&[("w1", &w1), ("w2", &w2), ("w3", &w3), ("w4", &w4)]);
        assert_eq!(greedy_pairs(&ds, 0, 1).unwrap(), vec![(2, 3)]);
        assert_eq!(greedy_pairs(&ds, 0, 40), Ok(vec![(2, 3)]));
        assert_eq!(greedy_pairs(&ds, 0, 41), Err(FailureReason::InsufficientConnectivity));
    }

    #[test]
    fn isolated_worker_fails_others_succeed() {
        let (a, b, c) = (span(0..30), span(0..30), span(0..30));
        let mut a = a;
        a.extend((0..6).map(|t| (t, 2)).map(|(t, l)| (t + 100, l)));
        let mut b = b;
        b.extend((0..3).map(|t| (t + 100, 2)));
        b.extend((3..6).map(|t| (t + 100, 1)));
        let mut c = c;
        c.extend((0..6).map(|t| (t + 100, if t % 2 == 0 { 2 } else { 1 })));
        let lone = span(500..520);
        let ds = dataset_from(&[("a", &a), ("b", &b), ("c", &c), ("lone", &lone)]);
        let reports = evaluate_all(&ds, &BinaryConfig::new(0.9, Weighting::Optimal)).unwrap();
        assert_eq!(reports.len(), 4);
        assert_eq!(
            reports[3].interval.failure(),
            Some(FailureReason::InsufficientConnectivity)
        );
        for r in &reports[..3] {
            assert!(!r.interval.is_failed(), "{r:?}");
        }
    }

    #[test]
    fn too_few_workers() {
        let a = span(0..5);
        let ds = dataset_from(&[("a", &a), ("b", &a)]);
        assert_eq!(
            evaluate_all(&ds, &BinaryConfig::new(0.5, Weighting::Uniform)),
            Err(BinaryError::TooFewWorkers(2))
        );
    }

    #[test]
    fn single_triple_aggregation_is_identity() {
        // 100 tasks with 82 % agreement for every pair: w1, w2, w3 each
        // wrong on a disjoint block of 10 tasks
        let mut rows: Vec<Vec<(usize, u16)>> = vec![Vec::new(); 3];
        for t in 0..100 {
            for (w, row) in rows.iter_mut().enumerate() {
                let wrong = t >= 10 * w && t < 10 * (w + 1);
                row.push((t, if wrong { 2 } else { 1 }));
            }
        }
        let ds = dataset_from(&[("w1", &rows[0]), ("w2", &rows[1]), ("w3", &rows[2])]);
        assert!((ds.agreement_rate(0, 1).unwrap() - 0.8).abs() < 1e-12);
        let (_, ci) = evaluate_triple(&ds, (0, 1, 2), 0.8);
        let report = evaluate_worker(&ds, 0, &BinaryConfig::new(0.8, Weighting::Optimal));
        assert_eq!(report.method, Some(Method::ThreeWorker));
        assert_eq!(report.weights, vec![1.0]);
        assert!((report.interval.estimate().unwrap() - ci.estimate().unwrap()).abs() < 1e-15);
        assert!((report.interval.half_width().unwrap() - ci.half_width().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn low_agreement_triple_fails() {
        let mut rows: Vec<Vec<(usize, u16)>> = vec![Vec::new(); 3];
        for t in 0..40 {
            rows[0].push((t, 1));
            rows[1].push((t, if t % 2 == 0 { 1 } else { 2 }));
            rows[2].push((t, 1));
        }
        let ds = dataset_from(&[("a", &rows[0]), ("b", &rows[1]), ("c", &rows[2])]);
        let (est, ci) = evaluate_triple(&ds, (0, 1, 2), 0.9);
        assert_eq!(est.failure, Some(FailureReason::AgreementAtOrBelowHalf));
        assert!(ci.is_failed());
        let report = evaluate_worker(&ds, 0, &BinaryConfig::new(0.9, Weighting::Optimal));
        assert_eq!(report.interval.failure(), Some(FailureReason::AllTriplesFailed));
        assert_eq!(report.triples_failed, 1);
    }

    #[test]
    fn cross_covariance_diagonal_is_dev_squared() {
        let fit = |dev| TripleFit {
            p_hat: 0.1,
            dev,
            d_i_j1: -0.6,
            d_i_j2: -0.6,
            d_j1_j2: 0.6,
            q: [0.82; 3],
            clamped: false,
        };
        let t = |j1, j2, dev| TripleEstimate {
            triple: (0, j1, j2),
            fit: Some(fit(dev)),
            failure: None,
        };
        let triples = [t(1, 2, 0.03), t(3, 4, 0.05)];
        let disjoint = cross_triple_covariances_with(&triples, 0.1, |_, _| 10, |_, _, _| 0, |_, _| Some(0.8));
        assert_eq!(disjoint, Matrix::from_diagonal(&[0.03 * 0.03, 0.05 * 0.05]));
        let full = cross_triple_covariances_with(&triples, 0.1, |_, _| 10, |_, _, _| 10, |_, _| Some(0.8));
        // four identical terms: 0.36 * 10 * 0.09 * 0.6 / 100
        assert!((full[(0, 1)] - 4.0 * 0.36 * 0.09 * 0.6 / 10.0).abs() < 1e-15);
        assert_eq!(full[(0, 1)], full[(1, 0)]);
    }

    proptest! {
        #[test]
        fn forward_inverse_round_trip(p1 in 0.01f64..0.49, p2 in 0.01f64..0.49, p3 in 0.01f64..0.49) {
            let (q12, q13, q23) = (agreement(p1, p2), agreement(p1, p3), agreement(p2, p3));
            let s = TripleStats::regular(1, q12, q13, q23);
            let p = s.error_rates().unwrap();
            prop_assert!((p[0] - p1).abs() < 1e-12);
            prop_assert!((p[1] - p2).abs() < 1e-12);
            prop_assert!((p[2] - p3).abs() < 1e-12);
        }

        #[test]
        fn monotone_and_sign_pattern(q12 in 0.55f64..0.99, q13 in 0.55f64..0.99, q23 in 0.55f64..0.99) {
            let d = f_derivatives(q12, q13, q23).unwrap();
            prop_assert!(d[0] < 0.0 && d[1] < 0.0 && d[2] > 0.0);
            let (base, _) = raw_error_rate(q12, q13, q23).unwrap();
            prop_assert!(raw_error_rate(q12 + 1e-3, q13, q23).unwrap().0 < base);
            prop_assert!(raw_error_rate(q12, q13 + 1e-3, q23).unwrap().0 < base);
            prop_assert!(raw_error_rate(q12, q13, q23 + 1e-3).unwrap().0 > base);
        }

        #[test]
        fn derivatives_match_finite_differences(q12 in 0.55f64..0.99, q13 in 0.55f64..0.99, q23 in 0.55f64..0.99) {
            let f = |a, b, c| raw_error_rate(a, b, c).unwrap().0;
            let h = 1e-6;
            let d = f_derivatives(q12, q13, q23).unwrap();
            let fd = [
                (f(q12 + h, q13, q23) - f(q12 - h, q13, q23)) / (2.0 * h),
                (f(q12, q13 + h, q23) - f(q12, q13 - h, q23)) / (2.0 * h),
                (f(q12, q13, q23 + h) - f(q12, q13, q23 - h)) / (2.0 * h),
            ];
            for (a, b) in d.iter().zip(fd) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3));
            }
        }
    }
}
