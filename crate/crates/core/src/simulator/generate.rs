use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fixtures::{KaryFixture, BINARY_RATES};
use crate::dataset::{GoldLabels, Label, ResponseDataset};
use crate::numerics::Matrix;

/// Independent generator for `(seed, point, replication)`.
///
/// Every experiment point and replication reads its own ChaCha stream, so
/// results do not depend on scheduling and paired runs see the same worlds.
pub fn substream(seed: u64, point: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point << 32 | (replication & 0xffff_ffff));
    rng
}

/// How often each worker attempts a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Density {
    Uniform(f64),
    /// Worker `i` of `m` (1-based) attempts with probability
    /// `(0.5·i + (m − i)) / m`.
    Ramp,
}

impl Density {
    pub fn for_worker(self, i: usize, m: usize) -> f64 {
        match self {
            Density::Uniform(d) => d,
            Density::Ramp => {
                let (i, m) = ((i + 1) as f64, m as f64);
                (0.5 * i + (m - i)) / m
            }
        }
    }

    pub fn is_valid(self) -> bool {
        match self {
            Density::Uniform(d) => d > 0.0 && d <= 1.0,
            Density::Ramp => true,
        }
    }
}

pub fn gen_binary_workers_with<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    (0..m).map(|_| BINARY_RATES[rng.random_range(0..BINARY_RATES.len())]).collect()
}

/// `m` error rates drawn uniformly from [`BINARY_RATES`].
pub fn gen_binary_workers(m: usize, seed: u64) -> Vec<f64> {
    gen_binary_workers_with(m, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn gen_binary_responses_with<R: Rng + ?Sized>(
    rates: &[f64],
    n: usize,
    density: Density,
    rng: &mut R,
) -> (ResponseDataset, GoldLabels) {
    let m = rates.len();
    let truth: Vec<Label> = (0..n).map(|_| rng.random_range(1..=2)).collect();
    let mut grid = vec![0; m * n];
    for (w, &p) in rates.iter().enumerate() {
        let d = density.for_worker(w, m);
        for t in 0..n {
            if d >= 1.0 || rng.random_bool(d) {
                let wrong = rng.random_bool(p);
                grid[w * n + t] = if wrong { 3 - truth[t] } else { truth[t] };
            }
        }
    }
    let ds = ResponseDataset::from_grid(names("w", m), names("t", n), 2, grid).expect("labels in range");
    (ds, GoldLabels::from_task_labels(truth.into_iter().map(Some).collect()))
}

/// Binary responses: uniform truth on {1, 2}, Bernoulli attempts, and each
/// answer flipped with the worker's error rate.
pub fn gen_binary_responses(rates: &[f64], n: usize, density: Density, seed: u64) -> (ResponseDataset, GoldLabels) {
    gen_binary_responses_with(rates, n, density, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last label with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// One fixture matrix per worker, each chosen uniformly.
pub fn assign_fixture<R: Rng + ?Sized>(fixture: KaryFixture, m: usize, rng: &mut R) -> Vec<Matrix> {
    let mats = fixture.matrices();
    (0..m).map(|_| mats[rng.random_range(0..3)].clone()).collect()
}

/// k-ary responses from explicit per-worker matrices: truth drawn from
/// `selectivity`, each attempted answer drawn from the row of the truth.
pub fn gen_kary_responses_from<R: Rng + ?Sized>(
    matrices: &[Matrix],
    selectivity: &[f64],
    n: usize,
    density: Density,
    rng: &mut R,
) -> (ResponseDataset, GoldLabels) {
    let k = selectivity.len();
    let m = matrices.len();
    let truth: Vec<usize> = (0..n).map(|_| sample_index(selectivity, rng)).collect();
    let mut grid = vec![0; m * n];
    for (w, p) in matrices.iter().enumerate() {
        let d = density.for_worker(w, m);
        for t in 0..n {
            if d >= 1.0 || rng.random_bool(d) {
                grid[w * n + t] = sample_index(p.row(truth[t]), rng) as Label + 1;
            }
        }
    }
    let ds = ResponseDataset::from_grid(names("w", m), names("t", n), k as Label, grid).expect("labels in range");
    let gold = GoldLabels::from_task_labels(truth.into_iter().map(|t| Some(t as Label + 1)).collect());
    (ds, gold)
}

/// Three workers with fixture matrices assigned at random. Returns the
/// matrices alongside the data. `selectivity` defaults to uniform.
pub fn gen_kary_responses(
    fixture: KaryFixture,
    n: usize,
    density: Density,
    selectivity: Option<&[f64]>,
    seed: u64,
) -> (ResponseDataset, GoldLabels, Vec<Matrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = fixture.arity();
    let uniform = vec![1.0 / k as f64; k];
    let s = selectivity.unwrap_or(&uniform);
    let mats = assign_fixture(fixture, 3, &mut rng);
    let (ds, gold) = gen_kary_responses_from(&mats, s, n, density, &mut rng);
    (ds, gold, mats)
}
