use serde::{Deserialize, Serialize};

use super::counts::{response_frequency_matrices, CountsTensor};
use crate::numerics::{eigendecompose, FailureReason, Matrix};

/// Tolerances used by [`prob_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Eigenvalues of the symmetrised agreement product down to
    /// `-spectrum_tol·‖M‖∞` are treated as zero.
    pub spectrum_tol: f64,
    /// A slice is dropped when an eigenvalue has `|Im| > imag_tol·‖X‖∞`.
    pub imag_tol: f64,
    /// A slice is dropped when two eigenvalues are closer than
    /// `gap_tol·max|λ|`; its eigenvectors are then not identified.
    pub gap_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            spectrum_tol: 1e-8,
            imag_tol: 1e-6,
            gap_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceDrop {
    /// Worker 3 never gave this response on an all-three task.
    Empty,
    ComplexEigenvalues,
    RepeatedEigenvalues,
    NumericalFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    /// 1-based responses of worker 3 whose slices were averaged.
    pub slices_used: Vec<usize>,
    pub slices_dropped: Vec<(usize, SliceDrop)>,
    /// Largest |imaginary part| seen in any slice decomposition.
    pub max_imag: f64,
    /// For each used slice, `perm[r]` is the row position assigned to
    /// eigenvector `r`.
    pub permutations: Vec<Vec<usize>>,
    /// Small negative eigenvalues of the agreement product set to zero.
    pub clamped_eigenvalues: usize,
}

/// Estimates of `S_D^{1/2}·P_i` for the three workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub v: [Matrix; 3],
    pub diagnostics: SpectralDiagnostics,
}

/// Per-slice `V1` candidates from a base run, used to keep row order and
/// sign stable when the tally is nudged.
pub(crate) type SliceReference = Vec<(usize, Matrix)>;

fn singular(_: crate::numerics::NumericsError) -> FailureReason {
    FailureReason::NonInvertibleFrequencyMatrix
}

/// Spectral point estimate of `V_i = S_D^{1/2}·P_i`.
pub fn prob_estimate(counts: &CountsTensor, cfg: &SpectralConfig) -> Result<ProbEstimate, FailureReason> {
    prob_estimate_tracked(counts, cfg, None).map(|(est, _)| est)
}

pub(crate) fn prob_estimate_tracked(
    counts: &CountsTensor,
    cfg: &SpectralConfig,
    reference: Option<&SliceReference>,
) -> Result<(ProbEstimate, SliceReference), FailureReason> {
    let k = counts.arity();
    let r = response_frequency_matrices(counts)?;
    let r32_inv = r.r32.inverse().map_err(singular)?;
    let m = (&(&r.r12 * &r32_inv) * &r.r31).symmetrize();
    if !m.is_finite() {
        return Err(FailureReason::NumericalFailure);
    }
    let eig = eigendecompose(&m).map_err(|_| FailureReason::NumericalFailure)?;
    let tol = cfg.spectrum_tol * m.norm_inf();
    let mut diagnostics = SpectralDiagnostics::default();
    let mut root = Vec::with_capacity(k);
    for &lambda in &eig.values {
        if lambda < -tol {
            return Err(FailureReason::NegativeSpectrum);
        }
        if lambda < 0.0 {
            diagnostics.clamped_eigenvalues += 1;
        }
        root.push(lambda.max(0.0).sqrt());
    }
    // E is orthonormal on the symmetric path, so E⁻¹ = Eᵀ
    let e = &eig.vectors;
    let u1 = &(e * &Matrix::from_diagonal(&root)) * &e.transpose();
    let u1t_inv = u1.transpose().inverse().map_err(singular)?;
    let u2 = &u1t_inv * &r.r12;
    let u2_inv = u2.inverse().map_err(singular)?;

    let mut kept: SliceReference = Vec::new();
    let slices: Vec<usize> = match reference {
        Some(rf) => rf.iter().map(|(j3, _)| *j3).collect(),
        None => (1..=k).collect(),
    };
    for (pos, &j3) in slices.iter().enumerate() {
        let slice = slice_candidate(counts, j3, &u1t_inv, &u2_inv, &u1, cfg, &mut diagnostics.max_imag);
        let v = match (slice, reference) {
            (Ok(v), _) => v,
            (Err(_), Some(_)) => return Err(FailureReason::JacobianUnusable),
            (Err(why), None) => {
                diagnostics.slices_dropped.push((j3, why));
                continue;
            }
        };
        let (aligned, perm) = match reference {
            Some(rf) => align_to(&v, &rf[pos].1),
            None => diagonal_order(&orient_rows(&v)),
        };
        diagnostics.slices_used.push(j3);
        diagnostics.permutations.push(perm);
        kept.push((j3, aligned));
    }
    if kept.is_empty() {
        return Err(FailureReason::NoUsableSlices);
    }
    let mut v1 = Matrix::zeros(k, k);
    for (_, v) in &kept {
        v1 = v1.add(v);
    }
    let v1 = v1.scale(1.0 / kept.len() as f64);
    let v1t_inv = v1.transpose().inverse().map_err(singular)?;
    let v2 = &v1t_inv * &r.r12;
    let v3 = &v1t_inv * &r.r13;
    if !(v1.is_finite() && v2.is_finite() && v3.is_finite()) {
        return Err(FailureReason::NumericalFailure);
    }
    Ok((
        ProbEstimate {
            v: [v1, v2, v3],
            diagnostics,
        },
        kept,
    ))
}

/// `U·U1` for one response of worker 3, before row ordering.
fn slice_candidate(
    counts: &CountsTensor,
    j3: usize,
    u1t_inv: &Matrix,
    u2_inv: &Matrix,
    u1: &Matrix,
    cfg: &SpectralConfig,
    max_imag: &mut f64,
) -> Result<Matrix, SliceDrop> {
    let k = counts.arity();
    let n_j3 = counts.n_j3(j3);
    if n_j3 <= 0.0 {
        return Err(SliceDrop::Empty);
    }
    let cond = Matrix::from_fn(k, k, |a, b| counts.get(a + 1, b + 1, j3) / n_j3);
    let x = &(u1t_inv * &cond) * u2_inv;
    let eig = eigendecompose(&x).map_err(|_| SliceDrop::NumericalFailure)?;
    *max_imag = max_imag.max(eig.max_imag);
    let scale = x.norm_inf();
    if eig.max_imag > cfg.imag_tol * scale {
        return Err(SliceDrop::ComplexEigenvalues);
    }
    let top = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig.values.windows(2).any(|w| (w[0] - w[1]).abs() < cfg.gap_tol * top) {
        return Err(SliceDrop::RepeatedEigenvalues);
    }
    // rows of U are the (left) eigenvectors; rescale each to unit length
    let mut u = eig.vectors.inverse().map_err(|_| SliceDrop::NumericalFailure)?;
    for i in 0..k {
        let norm = u.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(SliceDrop::NumericalFailure);
        }
        for j in 0..k {
            u[(i, j)] /= norm;
        }
    }
    Ok(&u * u1)
}

/// Flips each row so its sum is positive.
fn orient_rows(v: &Matrix) -> Matrix {
    let mut out = v.clone();
    for i in 0..v.rows() {
        if v.row(i).iter().sum::<f64>() < 0.0 {
            for j in 0..v.cols() {
                out[(i, j)] = -v[(i, j)];
            }
        }
    }
    out
}

/// Moves each row, in order, to the column holding its largest entry among
/// columns not yet taken.
pub fn diagonal_order(v: &Matrix) -> (Matrix, Vec<usize>) {
    let k = v.rows();
    let mut taken = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    let mut out = Matrix::zeros(k, k);
    for r in 0..k {
        let target = (0..k)
            .filter(|&c| !taken[c])
            .max_by(|&a, &b| v[(r, a)].total_cmp(&v[(r, b)]).then(b.cmp(&a)))
            .expect("a free column remains");
        taken[target] = true;
        perm.push(target);
        for c in 0..k {
            out[(target, c)] = v[(r, c)];
        }
    }
    (out, perm)
}

/// Orders and signs the rows of `v` to best match `reference` row by row.
fn align_to(v: &Matrix, reference: &Matrix) -> (Matrix, Vec<usize>) {
    let k = v.rows();
    let mut used = vec![false; k];
    let mut out = Matrix::zeros(k, k);
    let mut perm = vec![0; k];
    for target in 0..k {
        let dot = |r: usize| (0..k).map(|c| v[(r, c)] * reference[(target, c)]).sum::<f64>();
        let best = (0..k)
            .filter(|&r| !used[r])
            .max_by(|&a, &b| dot(a).abs().total_cmp(&dot(b).abs()))
            .expect("a free row remains");
        used[best] = true;
        perm[best] = target;
        let sign = if dot(best) < 0.0 { -1.0 } else { 1.0 };
        for c in 0..k {
            out[(target, c)] = sign * v[(best, c)];
        }
    }
    (out, perm)
}

/// Selectivity from `V1`: squared row sums, renormalised to sum to one.
pub fn recover_selectivity(v1: &Matrix) -> Result<Vec<f64>, FailureReason> {
    let sums: Vec<f64> = (0..v1.rows()).map(|i| v1.row(i).iter().sum()).collect();
    if sums.iter().any(|s| !s.is_finite() || s.abs() < 1e-12) {
        return Err(FailureReason::DegenerateSelectivity);
    }
    let sq: Vec<f64> = sums.iter().map(|s| s * s).collect();
    let total: f64 = sq.iter().sum();
    Ok(sq.iter().map(|s| s / total).collect())
}

/// Divides each row by its sum. Fails on a row with non-positive sum.
pub fn normalize_rows(v: &Matrix) -> Result<Matrix, FailureReason> {
    let mut out = v.clone();
    for i in 0..v.rows() {
        let s: f64 = v.row(i).iter().sum();
        if !(s.is_finite() && s > 1e-12) {
            return Err(FailureReason::DegenerateSelectivity);
        }
        for j in 0..v.cols() {
            out[(i, j)] /= s;
        }
    }
    Ok(out)
}

/// Clamps entries to `[0, 1]` and renormalises rows; returns whether any
/// entry moved.
pub fn clamp_stochastic(p: &Matrix) -> (Matrix, bool) {
    let mut out = p.map(|x| x.clamp(0.0, 1.0));
    let changed = out != *p;
    for i in 0..out.rows() {
        let s: f64 = out.row(i).iter().sum();
        if s > 0.0 {
            for j in 0..out.cols() {
                out[(i, j)] /= s;
            }
        }
    }
    (out, changed)
}

/// Row-stochastic response matrices, selectivity and the raw `V` estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseProbEstimate {
    pub v: [Matrix; 3],
    /// Rows normalised, clamped to `[0, 1]`, renormalised.
    pub p: [Matrix; 3],
    pub clamped: [bool; 3],
    pub selectivity: Vec<f64>,
    pub diagnostics: SpectralDiagnostics,
}

/// [`prob_estimate`] followed by row normalisation and selectivity
/// recovery.
pub fn estimate_response_probabilities(
    counts: &CountsTensor,
    cfg: &SpectralConfig,
) -> Result<ResponseProbEstimate, FailureReason> {
    finish(prob_estimate(counts, cfg)?)
}

pub(crate) fn finish(est: ProbEstimate) -> Result<ResponseProbEstimate, FailureReason> {
    let selectivity = recover_selectivity(&est.v[0])?;
    let mut p = Vec::with_capacity(3);
    let mut clamped = [false; 3];
    for (i, v) in est.v.iter().enumerate() {
        let (c, moved) = clamp_stochastic(&normalize_rows(v)?);
        clamped[i] = moved;
        p.push(c);
    }
    let p: [Matrix; 3] = p.try_into().expect("three workers");
    Ok(ResponseProbEstimate {
        v: est.v,
        p,
        clamped,
        selectivity,
        diagnostics: est.diagnostics,
    })
}
