//! Synthetic crowds and the coverage / interval-size experiments run on
//! them.
//!
//! Each replication draws a fresh world (worker parameters, truths,
//! attempts, responses) from its own random stream, evaluates it, and
//! tallies how many intervals contain the true parameter. Replications run
//! in parallel; tallies are summed in replication order, so a result is a
//! pure function of its configuration.

mod fixtures;
mod generate;

pub use fixtures::{KaryFixture, BINARY_RATES};
pub use generate::{
    assign_fixture, gen_binary_responses, gen_binary_responses_with, gen_binary_workers,
    gen_binary_workers_with, gen_kary_responses, gen_kary_responses_from, substream, Density,
};

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{evaluate_worker, BinaryConfig, Weighting};
use crate::kary::{build_counts, kary_confidence_intervals, KaryConfig, RowNormalization};
use crate::numerics::round_significant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "fixture")]
pub enum WorkerModel {
    /// Binary workers with rates from [`BINARY_RATES`].
    Binary,
    /// Three k-ary workers, matrices drawn from a fixture set.
    Kary(KaryFixture),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub confidences: Vec<f64>,
    pub density: Density,
    pub replications: usize,
    pub seed: u64,
    pub model: WorkerModel,
    pub weighting: Weighting,
    pub normalization: RowNormalization,
}

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const FAST_REPLICATIONS: usize = 100;

/// `c ∈ {0.05, 0.10, …, 0.95}`.
pub fn coverage_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 5.0 / 100.0).collect()
}

/// `d ∈ {0.50, 0.55, …, 0.95}`.
pub fn density_grid() -> Vec<f64> {
    (10..=19).map(|i| i as f64 * 5.0 / 100.0).collect()
}

impl SimConfig {
    pub fn binary(n: usize, m: usize, density: Density) -> Self {
        Self {
            n,
            m,
            confidences: coverage_grid(),
            density,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            model: WorkerModel::Binary,
            weighting: Weighting::Optimal,
            normalization: RowNormalization::DeltaOnRatio,
        }
    }

    pub fn kary(fixture: KaryFixture, n: usize, density: Density) -> Self {
        Self {
            m: 3,
            model: WorkerModel::Kary(fixture),
            ..Self::binary(n, 3, density)
        }
    }

    /// Caps replications at [`FAST_REPLICATIONS`].
    pub fn fast(mut self) -> Self {
        self.replications = self.replications.min(FAST_REPLICATIONS);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !self.density.is_valid() {
            return bad("density must be in (0, 1]");
        }
        if self.confidences.is_empty() || self.confidences.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return bad("confidence levels must lie in (0, 1)");
        }
        match self.model {
            WorkerModel::Binary if self.m < 3 => bad("binary experiments need m >= 3"),
            WorkerModel::Kary(_) if self.m != 3 => bad("k-ary experiments use exactly 3 workers"),
            _ => Ok(()),
        }
    }

    fn arity(&self) -> usize {
        match self.model {
            WorkerModel::Binary => 2,
            WorkerModel::Kary(f) => f.arity(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    covered: usize,
    total: usize,
    width_sum: f64,
    clipped_sum: f64,
    failures: usize,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.covered += o.covered;
        self.total += o.total;
        self.width_sum += o.width_sum;
        self.clipped_sum += o.clipped_sum;
        self.failures += o.failures;
        self
    }

    fn record(&mut self, ci: &crate::ConfidenceInterval, truth: f64) {
        match ci.contains(truth) {
            Some(hit) => {
                self.total += 1;
                self.covered += usize::from(hit);
                self.width_sum += ci.width().unwrap_or(0.0);
                if let (Some(lo), Some(hi)) = (ci.lower(), ci.upper()) {
                    self.clipped_sum += (hi.min(1.0) - lo.max(0.0)).max(0.0);
                }
            }
            None => self.failures += 1,
        }
    }
}

/// One experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub confidence: f64,
    /// `None` for per-worker ramp densities.
    pub density: Option<f64>,
    pub arity: usize,
    /// Covered / total over non-failed intervals; `None` if every interval
    /// failed.
    pub accuracy: Option<f64>,
    pub mean_width: Option<f64>,
    /// Mean width of each interval intersected with `[0, 1]`.
    pub mean_clipped_width: Option<f64>,
    pub intervals: usize,
    pub covered: usize,
    pub failures: usize,
}

impl GridRecord {
    fn new(confidence: f64, density: Density, arity: usize, t: Tally) -> Self {
        let frac = |x: f64| (t.total > 0).then(|| x / t.total as f64);
        Self {
            confidence,
            density: match density {
                Density::Uniform(d) => Some(d),
                Density::Ramp => None,
            },
            arity,
            accuracy: frac(t.covered as f64),
            mean_width: frac(t.width_sum),
            mean_clipped_width: frac(t.clipped_sum),
            intervals: t.total,
            covered: t.covered,
            failures: t.failures,
        }
    }

    fn rounded(&self) -> Self {
        let r = |x: Option<f64>| x.map(|v| round_significant(v, 9));
        Self {
            confidence: round_significant(self.confidence, 9),
            density: r(self.density),
            accuracy: r(self.accuracy),
            mean_width: r(self.mean_width),
            mean_clipped_width: r(self.mean_clipped_width),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    /// Distinguishes paired runs (e.g. `uniform` / `optimal`).
    pub series: String,
    pub config: SimConfig,
    pub records: Vec<GridRecord>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{}", round_significant(v, 9))).unwrap_or_default()
}

pub const CSV_HEADER: &str = "experiment,series,arity,density,confidence,accuracy,mean_width,mean_clipped_width,intervals,covered,failures,seed";

impl ExperimentResult {
    /// Same result with every real number rounded to 9 significant digits.
    pub fn rounded(&self) -> Self {
        Self {
            records: self.records.iter().map(GridRecord::rounded).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.experiment,
                self.series,
                r.arity,
                r.density.map_or_else(|| "ramp".to_owned(), |d| fmt_opt(Some(d))),
                fmt_opt(Some(r.confidence)),
                fmt_opt(r.accuracy),
                fmt_opt(r.mean_width),
                fmt_opt(r.mean_clipped_width),
                r.intervals,
                r.covered,
                r.failures,
                self.config.seed
            )?;
        }
        Ok(())
    }

    /// CSV with [`CSV_HEADER`] and one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        writeln!(buf, "{CSV_HEADER}").expect("write to vec");
        self.write_csv_rows(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii output")
    }
}

fn binary_world<R: Rng + ?Sized>(cfg: &SimConfig, confidence: f64, density: Density, weightings: &[Weighting], rng: &mut R) -> Vec<Tally> {
    let rates = gen_binary_workers_with(cfg.m, rng);
    let (ds, _) = gen_binary_responses_with(&rates, cfg.n, density, rng);
    weightings
        .iter()
        .map(|&w| {
            let bc = BinaryConfig::new(confidence, w);
            let mut t = Tally::default();
            for (i, &p) in rates.iter().enumerate() {
                t.record(&evaluate_worker(&ds, i, &bc).interval, p);
            }
            t
        })
        .collect()
}

fn kary_world<R: Rng + ?Sized>(cfg: &SimConfig, fixture: KaryFixture, confidence: f64, density: Density, rng: &mut R) -> Tally {
    let k = fixture.arity();
    let mats = assign_fixture(fixture, 3, rng);
    let (ds, _) = gen_kary_responses_from(&mats, &vec![1.0 / k as f64; k], cfg.n, density, rng);
    let mut kc = KaryConfig::new(confidence);
    kc.normalization = cfg.normalization;
    let report = kary_confidence_intervals(&build_counts(&ds, (0, 1, 2)), &kc);
    let mut t = Tally::default();
    for (i, a, b, ci) in report.all_intervals() {
        t.record(ci, mats[i][(a, b)]);
    }
    t
}

/// Sums per-replication tallies (one per series) in replication order.
fn replicate(
    cfg: &SimConfig,
    point: u64,
    series: usize,
    world: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tally> + Sync,
) -> Vec<Tally> {
    let per_rep: Vec<Vec<Tally>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| world(&mut substream(cfg.seed, point, r)))
        .collect();
    per_rep.into_iter().fold(vec![Tally::default(); series], |acc, t| {
        acc.into_iter().zip(t).map(|(a, b)| a.merge(b)).collect()
    })
}

fn point_tallies(cfg: &SimConfig, point: u64, confidence: f64, density: Density, weightings: &[Weighting]) -> Vec<Tally> {
    match cfg.model {
        WorkerModel::Binary => replicate(cfg, point, weightings.len(), |rng| {
            binary_world(cfg, confidence, density, weightings, rng)
        }),
        WorkerModel::Kary(f) => replicate(cfg, point, 1, |rng| vec![kary_world(cfg, f, confidence, density, rng)]),
    }
}

fn series_name(cfg: &SimConfig) -> String {
    match cfg.model {
        WorkerModel::Binary => match cfg.weighting {
            Weighting::Uniform => "uniform".into(),
            Weighting::Optimal => "optimal".into(),
        },
        WorkerModel::Kary(f) => format!("k{}", f.arity()),
    }
}

/// Interval accuracy and mean width at each confidence level, with fresh
/// worlds per level.
pub fn run_coverage_experiment(cfg: &SimConfig) -> Result<ExperimentResult, SimError> {
    cfg.validate()?;
    let records = cfg
        .confidences
        .iter()
        .enumerate()
        .map(|(g, &c)| {
            let t = point_tallies(cfg, g as u64, c, cfg.density, &[cfg.weighting]);
            GridRecord::new(c, cfg.density, cfg.arity(), t[0])
        })
        .collect();
    Ok(ExperimentResult {
        experiment: "coverage".into(),
        series: series_name(cfg),
        config: cfg.clone(),
        records,
    })
}

/// Points of a size sweep. Empty `densities` means "use the config's
/// density"; empty `arities` means "use the config's model".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SizeSweep {
    pub densities: Vec<f64>,
    pub confidences: Vec<f64>,
    pub arities: Vec<usize>,
}

/// Mean interval width over a grid of arity × density × confidence.
/// Returns one result per arity.
pub fn run_size_experiment(cfg: &SimConfig, sweep: &SizeSweep) -> Result<Vec<ExperimentResult>, SimError> {
    cfg.validate()?;
    let densities: Vec<Density> = if sweep.densities.is_empty() {
        vec![cfg.density]
    } else {
        sweep.densities.iter().map(|&d| Density::Uniform(d)).collect()
    };
    if densities.iter().any(|d| !d.is_valid()) {
        return Err(SimError::InvalidConfig("density must be in (0, 1]".into()));
    }
    let confidences = if sweep.confidences.is_empty() { cfg.confidences.clone() } else { sweep.confidences.clone() };
    let models: Vec<WorkerModel> = if sweep.arities.is_empty() {
        vec![cfg.model]
    } else {
        sweep
            .arities
            .iter()
            .map(|&k| match cfg.model {
                WorkerModel::Binary if k == 2 => Ok(WorkerModel::Binary),
                _ => KaryFixture::for_arity(k)
                    .map(WorkerModel::Kary)
                    .ok_or_else(|| SimError::InvalidConfig(format!("no fixture for arity {k}"))),
            })
            .collect::<Result<_, _>>()?
    };
    let mut results = Vec::with_capacity(models.len());
    let mut point = 0u64;
    for model in models {
        let mut sub = cfg.clone();
        sub.model = model;
        sub.confidences = confidences.clone();
        if let WorkerModel::Kary(_) = model {
            sub.m = 3;
        }
        sub.validate()?;
        let mut records = Vec::new();
        for &d in &densities {
            for &c in &confidences {
                let t = point_tallies(&sub, point, c, d, &[sub.weighting]);
                records.push(GridRecord::new(c, d, sub.arity(), t[0]));
                point += 1;
            }
        }
        results.push(ExperimentResult {
            experiment: "size".into(),
            series: series_name(&sub),
            config: sub,
            records,
        });
    }
    Ok(results)
}

/// Paired uniform / optimal results over identical worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightComparison {
    pub uniform: ExperimentResult,
    pub optimal: ExperimentResult,
}

pub const PAIRED_CSV_HEADER: &str =
    "confidence,uniform_accuracy,uniform_mean_width,uniform_failures,optimal_accuracy,optimal_mean_width,optimal_failures,seed";

impl WeightComparison {
    pub fn rounded(&self) -> Self {
        Self {
            uniform: self.uniform.rounded(),
            optimal: self.optimal.rounded(),
        }
    }

    /// One row per confidence level with uniform and optimal side by side.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(PAIRED_CSV_HEADER);
        out.push('\n');
        for (u, o) in self.uniform.records.iter().zip(&self.optimal.records) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_opt(Some(u.confidence)),
                fmt_opt(u.accuracy),
                fmt_opt(u.mean_width),
                u.failures,
                fmt_opt(o.accuracy),
                fmt_opt(o.mean_width),
                o.failures,
                self.uniform.config.seed
            ));
        }
        out
    }
}

/// Evaluates every world with both weightings.
pub fn compare_weighting(cfg: &SimConfig) -> Result<WeightComparison, SimError> {
    cfg.validate()?;
    if cfg.model != WorkerModel::Binary || cfg.m < 5 {
        return Err(SimError::InvalidConfig(
            "weight comparison needs binary workers and m >= 5".into(),
        ));
    }
    let both = [Weighting::Uniform, Weighting::Optimal];
    let mut uni = Vec::new();
    let mut opt = Vec::new();
    for (g, &c) in cfg.confidences.iter().enumerate() {
        let t = point_tallies(cfg, g as u64, c, cfg.density, &both);
        uni.push(GridRecord::new(c, cfg.density, 2, t[0]));
        opt.push(GridRecord::new(c, cfg.density, 2, t[1]));
    }
    let make = |w: Weighting, records| {
        let mut config = cfg.clone();
        config.weighting = w;
        ExperimentResult {
            experiment: "weight-comparison".into(),
            series: series_name(&config),
            config,
            records,
        }
    };
    Ok(WeightComparison {
        uniform: make(Weighting::Uniform, uni),
        optimal: make(Weighting::Optimal, opt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let c = coverage_grid();
        assert_eq!(c.len(), 19);
        assert_eq!((c[0], c[9], c[18]), (0.05, 0.5, 0.95));
        let d = density_grid();
        assert_eq!((d.len(), d[0], d[9]), (10, 0.5, 0.95));
    }

    #[test]
    fn single_replication_accuracy_is_zero_or_one_per_interval() {
        let mut cfg = SimConfig::binary(100, 3, Density::Uniform(1.0));
        cfg.replications = 1;
        cfg.confidences = vec![0.5];
        let res = run_coverage_experiment(&cfg).unwrap();
        let r = &res.records[0];
        assert_eq!(r.intervals + r.failures, 3);
        assert!(r.accuracy.is_some());
    }

    #[test]
    fn deterministic() {
        let mut cfg = SimConfig::binary(60, 5, Density::Uniform(0.8));
        cfg.replications = 8;
        cfg.confidences = vec![0.3, 0.7];
        cfg.seed = 42;
        let a = run_coverage_experiment(&cfg).unwrap();
        let b = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        cfg.seed = 43;
        assert_ne!(run_coverage_experiment(&cfg).unwrap(), a);
    }

    #[test]
    fn validation() {
        let mut cfg = SimConfig::binary(10, 2, Density::Uniform(0.5));
        assert!(cfg.validate().is_err());
        cfg.m = 3;
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        cfg.replications = 1;
        cfg.density = Density::Uniform(0.0);
        assert!(cfg.validate().is_err());
        let cfg = SimConfig::binary(10, 3, Density::Uniform(0.5));
        assert!(compare_weighting(&cfg).is_err());
    }

    #[test]
    fn kary_point_runs() {
        let mut cfg = SimConfig::kary(KaryFixture::Arity2, 300, Density::Uniform(1.0));
        cfg.replications = 4;
        cfg.confidences = vec![0.8];
        let res = run_coverage_experiment(&cfg).unwrap();
        let r = &res.records[0];
        assert_eq!(r.intervals + r.failures, 4 * 3 * 4);
        assert_eq!(r.arity, 2);
    }

    #[test]
    fn paired_csv_shape() {
        let mut cfg = SimConfig::binary(60, 5, Density::Uniform(0.9));
        cfg.replications = 3;
        cfg.confidences = vec![0.5, 0.9];
        let cmp = compare_weighting(&cfg).unwrap();
        let csv = cmp.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(PAIRED_CSV_HEADER));
    }
}
