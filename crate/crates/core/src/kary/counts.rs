use serde::{Deserialize, Serialize};

use crate::dataset::ResponseDataset;
use crate::numerics::{FailureReason, Matrix};

/// `(k+1)³` joint response tally for an ordered worker triple.
///
/// Index 0 means "did not attempt". Entries are `f64` so the numerical
/// Jacobian can nudge single cells by fractional amounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTensor {
    k: usize,
    data: Vec<f64>,
}

/// Which of the three workers attempted a task, as a 3-bit mask
/// (bit 0 = worker 1).
pub type AttemptPattern = u8;

impl CountsTensor {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; (k + 1).pow(3)],
        }
    }

    pub fn arity(&self) -> usize {
        self.k
    }

    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        let s = self.k + 1;
        (a * s + b) * s + c
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.idx(a, b, c)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.idx(a, b, c);
        self.data[i] = v;
    }

    pub fn add(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.idx(a, b, c);
        self.data[i] += v;
    }

    /// Flat storage, `a`-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, flat: usize) -> (usize, usize, usize) {
        let s = self.k + 1;
        (flat / (s * s), (flat / s) % s, flat % s)
    }

    pub fn pattern(a: usize, b: usize, c: usize) -> AttemptPattern {
        u8::from(a > 0) | u8::from(b > 0) << 1 | u8::from(c > 0) << 2
    }

    /// Number of tasks attempted by exactly the workers in `pattern`.
    pub fn pattern_total(&self, pattern: AttemptPattern) -> f64 {
        let mut total = 0.0;
        for (flat, &v) in self.data.iter().enumerate() {
            let (a, b, c) = self.cell(flat);
            if Self::pattern(a, b, c) == pattern {
                total += v;
            }
        }
        total
    }

    /// Tasks attempted by all three workers.
    pub fn n123(&self) -> f64 {
        self.pattern_total(0b111)
    }

    /// Tasks attempted by workers 1 and 2 only.
    pub fn n12(&self) -> f64 {
        self.pattern_total(0b011)
    }

    /// Tasks attempted by workers 2 and 3 only.
    pub fn n23(&self) -> f64 {
        self.pattern_total(0b110)
    }

    /// Tasks attempted by workers 3 and 1 only.
    pub fn n31(&self) -> f64 {
        self.pattern_total(0b101)
    }

    /// All-three tasks on which worker 3 answered `j3`.
    pub fn n_j3(&self, j3: usize) -> f64 {
        let mut total = 0.0;
        for a in 1..=self.k {
            for b in 1..=self.k {
                total += self.get(a, b, j3);
            }
        }
        total
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Expected tally for `n` tasks under the response model, each worker
    /// attempting every task. `p[i]` is worker `i`'s row-stochastic matrix
    /// and `s` the prior over true labels.
    pub fn expected(p: &[Matrix; 3], s: &[f64], n: f64) -> Self {
        let k = s.len();
        let mut out = Self::zeros(k);
        for (t, &st) in s.iter().enumerate() {
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        out.add(a + 1, b + 1, c + 1, n * st * p[0][(t, a)] * p[1][(t, b)] * p[2][(t, c)]);
                    }
                }
            }
        }
        out
    }
}

/// Tallies joint responses of `triple` over every task at least one of the
/// three attempted.
pub fn build_counts(ds: &ResponseDataset, triple: (usize, usize, usize)) -> CountsTensor {
    let k = ds.arity() as usize;
    let mut counts = CountsTensor::zeros(k);
    let (r1, r2, r3) = (ds.worker_row(triple.0), ds.worker_row(triple.1), ds.worker_row(triple.2));
    for t in 0..ds.num_tasks() {
        let (a, b, c) = (r1[t] as usize, r2[t] as usize, r3[t] as usize);
        if a + b + c > 0 {
            counts.add(a, b, c, 1.0);
        }
    }
    counts
}

/// `R12`, `R23`, `R31` and their transposes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrices {
    pub r12: Matrix,
    pub r23: Matrix,
    pub r31: Matrix,
    pub r21: Matrix,
    pub r32: Matrix,
    pub r13: Matrix,
}

/// Joint response frequencies of each pair over the tasks that pair
/// co-attempted.
pub fn response_frequency_matrices(counts: &CountsTensor) -> Result<FrequencyMatrices, FailureReason> {
    let k = counts.arity();
    let n123 = counts.n123();
    let d12 = n123 + counts.n12();
    let d23 = n123 + counts.n23();
    let d31 = n123 + counts.n31();
    if d12 <= 0.0 || d23 <= 0.0 || d31 <= 0.0 {
        return Err(FailureReason::InsufficientOverlap);
    }
    let mut r12 = Matrix::zeros(k, k);
    let mut r23 = Matrix::zeros(k, k);
    let mut r31 = Matrix::zeros(k, k);
    for j1 in 1..=k {
        for j2 in 1..=k {
            let (mut s12, mut s23, mut s31) = (0.0, 0.0, 0.0);
            for j3 in 0..=k {
                s12 += counts.get(j1, j2, j3);
                s23 += counts.get(j3, j1, j2);
                s31 += counts.get(j2, j3, j1);
            }
            r12[(j1 - 1, j2 - 1)] = s12 / d12;
            r23[(j1 - 1, j2 - 1)] = s23 / d23;
            r31[(j1 - 1, j2 - 1)] = s31 / d31;
        }
    }
    Ok(FrequencyMatrices {
        r21: r12.transpose(),
        r32: r23.transpose(),
        r13: r31.transpose(),
        r12,
        r23,
        r31,
    })
}

/// Multinomial covariance between two cells of the tally.
///
/// Cells with different attempt patterns are independent. Within a
/// pattern with `n` tasks the counts are multinomial: `C(n−C)/n` on the
/// diagonal and `−CᵢCⱼ/n` off it. A pattern with no tasks gives 0.
pub fn counts_covariance(counts: &CountsTensor, i: (usize, usize, usize), j: (usize, usize, usize)) -> f64 {
    let pi = CountsTensor::pattern(i.0, i.1, i.2);
    if pi != CountsTensor::pattern(j.0, j.1, j.2) {
        return 0.0;
    }
    let n = counts.pattern_total(pi);
    if n <= 0.0 {
        return 0.0;
    }
    let ci = counts.get(i.0, i.1, i.2);
    if i == j {
        ci * (n - ci) / n
    } else {
        -ci * counts.get(j.0, j.1, j.2) / n
    }
}

/// `gᵀ Σ g` for a gradient over flat cell indices, using the block
/// structure of [`counts_covariance`]:
/// per pattern, `Σ g²C − (Σ gC)² / n`.
pub fn counts_quadratic_form(counts: &CountsTensor, gradient: &[(usize, f64)]) -> f64 {
    let mut sq = [0.0f64; 8];
    let mut lin = [0.0f64; 8];
    for &(flat, g) in gradient {
        let (a, b, c) = counts.cell(flat);
        let p = CountsTensor::pattern(a, b, c) as usize;
        let v = counts.as_slice()[flat];
        sq[p] += g * g * v;
        lin[p] += g * v;
    }
    let mut total = 0.0;
    for p in 0..8 {
        if sq[p] == 0.0 && lin[p] == 0.0 {
            continue;
        }
        let n = counts.pattern_total(p as AttemptPattern);
        if n > 0.0 {
            total += sq[p] - lin[p] * lin[p] / n;
        }
    }
    total
}
