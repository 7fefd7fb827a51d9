//! `crowdgauge` command-line front end.
//!
//! Exit codes: 0 success (per-item failures are reported in the output),
//! 1 usage error, 2 input parse error, 3 estimator-level failure.

mod mapexpr;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crowdgauge::binary::{evaluate_all, BinaryConfig, BinaryError, Weighting, WorkerReport};
use crowdgauge::dataset::{
    load_gold, load_responses, prune_spammers, reduce_arity, relabel_table, write_responses_csv,
    Format, GoldLabels, DEFAULT_SPAM_THRESHOLD,
};
use crowdgauge::kary::{evaluate_kary_triple, triples_with_overlap, KaryConfig, KaryReport, RowNormalization};
use crowdgauge::numerics::round_significant;
use crowdgauge::simulator::{
    compare_weighting, coverage_grid, density_grid, run_coverage_experiment, run_size_experiment,
    Density, ExperimentResult, KaryFixture, SimConfig, SizeSweep, CSV_HEADER,
};
use crowdgauge::{ConfidenceInterval, ResponseDataset};

use mapexpr::LabelMap;

const DIGITS: usize = 9;

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: e.into() }
    }
    fn parse(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: e.into() }
    }
    fn hard(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: e.into() }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "crowdgauge", version, about = "Confidence intervals for crowd-worker quality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Binary error-rate intervals for every worker.
    Evaluate(EvaluateArgs),
    /// k-ary response-probability intervals for worker triples.
    EvaluateKary(KaryArgs),
    /// Run a simulation experiment.
    Simulate(SimulateArgs),
    /// Remove workers who disagree with the majority too often.
    Prune(PruneArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Response file (CSV `task_id,worker_id,response`, or JSON by extension).
    #[arg(long)]
    input: PathBuf,
    /// Label mapping applied before estimation, e.g. "g->floor((g-1)/2)+1".
    #[arg(long)]
    map: Option<String>,
}

fn parse_confidence(s: &str) -> Result<f64, String> {
    let c: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if c > 0.0 && c < 1.0 {
        Ok(c)
    } else {
        Err(format!("confidence must lie in (0, 1), got {c}"))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightingArg {
    Uniform,
    Optimal,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Uniform => Weighting::Uniform,
            WeightingArg::Optimal => Weighting::Optimal,
        }
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Report path (JSON); stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95, value_parser = parse_confidence)]
    confidence: f64,
    #[arg(long, value_enum, default_value_t = WeightingArg::Optimal)]
    weighting: WeightingArg,
    /// Minimum shared tasks for a co-worker pair.
    #[arg(long, default_value_t = 1)]
    min_overlap: usize,
    /// Gold CSV (`task_id,response`); adds a proxy error rate per worker.
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormalizationArg {
    /// Delta method on the ratio `V(a,b) / Σ_l V(a,l)`.
    Ratio,
    /// Scale midpoints and half-widths by the row sum of midpoints.
    RowSum,
}

#[derive(Args, Debug)]
struct KaryArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95, value_parser = parse_confidence)]
    confidence: f64,
    /// Exactly three comma-separated worker ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "auto_triples", required_unless_present = "auto_triples")]
    workers: Option<Vec<String>>,
    /// Evaluate triples sharing at least this many tasks.
    #[arg(long)]
    auto_triples: Option<usize>,
    /// Cap on the number of automatically selected triples.
    #[arg(long, default_value_t = 50)]
    max_triples: usize,
    /// Relative perturbation for the numerical Jacobian.
    #[arg(long, default_value_t = crowdgauge::kary::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Ratio)]
    normalization: NormalizationArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Coverage,
    SizeVsDensity,
    WeightComparison,
    KaryCoverage,
    KarySize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Tasks per world.
    #[arg(long)]
    n: Option<usize>,
    /// Workers per world (binary experiments).
    #[arg(long)]
    m: Option<usize>,
    /// Attempt probability, or "ramp" for per-worker densities.
    #[arg(long)]
    d: Option<String>,
    #[arg(long, default_value_t = crowdgauge::simulator::DEFAULT_REPLICATIONS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// At most 100 replications.
    #[arg(long)]
    fast: bool,
    /// Comma-separated confidence levels; defaults depend on the experiment.
    #[arg(long, value_delimiter = ',', value_parser = parse_confidence)]
    confidence: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = WeightingArg::Optimal)]
    weighting: WeightingArg,
    /// Fixture arity for kary-coverage.
    #[arg(long, default_value_t = 2)]
    arity: usize,
    /// Arities for kary-size.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    arities: Vec<usize>,
    /// CSV table path; stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the full result as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Filtered response CSV.
    #[arg(long)]
    output: PathBuf,
    /// JSON list of removed workers; stdout if omitted.
    #[arg(long)]
    removed: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPAM_THRESHOLD)]
    threshold: f64,
}

/// Writes via a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match path {
        Some(p) => write_atomic(p, bytes).map_err(Failure::hard),
        None => std::io::stdout()
            .write_all(bytes)
            .context("writing to stdout")
            .map_err(Failure::hard),
    }
}

fn to_json_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

/// Rounds every float in a JSON tree to [`DIGITS`] significant digits.
fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().expect("f64 number"), DIGITS);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

struct Loaded {
    ds: ResponseDataset,
    table: Option<Vec<Option<u16>>>,
}

fn load_input(args: &InputArgs) -> Result<Loaded, Failure> {
    let map = args
        .map
        .as_deref()
        .map(LabelMap::parse)
        .transpose()
        .map_err(Failure::usage)?;
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))
        .map_err(Failure::parse)?;
    let ds = load_responses(BufReader::new(file), Format::from_path(&args.input))
        .with_context(|| format!("reading {}", args.input.display()))
        .map_err(Failure::parse)?;
    let Some(map) = map else {
        return Ok(Loaded { ds, table: None });
    };
    let apply = |g: u16| map.apply(i64::from(g));
    let mapped = reduce_arity(&ds, apply).map_err(|e| Failure::usage(anyhow!("--map: {e}")))?;
    Ok(Loaded {
        table: Some(relabel_table(ds.arity(), apply)),
        ds: mapped,
    })
}

fn require_binary(ds: &ResponseDataset) -> CmdResult {
    if ds.arity() == 2 {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "input has {} distinct labels; reduce it to binary with --map, e.g. --map \"g->min(g,2)\"",
            ds.arity()
        )))
    }
}

fn ci_json(ci: &ConfidenceInterval) -> Value {
    match ci.failure() {
        Some(reason) => json!({
            "failed": true,
            "failure_reason": reason,
            "confidence": ci.confidence(),
        }),
        None => json!({
            "failed": false,
            "estimate": ci.estimate(),
            "half_width": ci.half_width(),
            "lower": ci.lower(),
            "upper": ci.upper(),
            "confidence": ci.confidence(),
        }),
    }
}

fn worker_json(r: &WorkerReport, gold: Option<(&GoldLabels, &ResponseDataset)>) -> Value {
    let mut v = ci_json(&r.interval);
    let o = v.as_object_mut().expect("ci_json returns an object");
    o.insert("worker".into(), json!(r.worker));
    o.insert("triples_used".into(), json!(r.triples_used));
    o.insert("triples_failed".into(), json!(r.triples_failed));
    o.insert("method".into(), json!(r.method));
    o.insert("clamped".into(), json!(r.clamped));
    o.insert("weights".into(), json!(r.weights));
    if let Some((gold, ds)) = gold {
        let proxy = gold.error_rate(ds, r.worker_index);
        o.insert("proxy_error_rate".into(), json!(proxy));
        o.insert("covered".into(), json!(proxy.and_then(|p| r.interval.contains(p))));
    }
    v
}

fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let loaded = load_input(&args.input)?;
    let ds = &loaded.ds;
    require_binary(ds)?;
    let gold = match &args.gold {
        Some(path) => {
            let file = File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(Failure::parse)?;
            let mut gold = load_gold(BufReader::new(file), ds)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::parse)?;
            if let Some(t) = &loaded.table {
                gold = gold.relabel(t);
            }
            Some(gold)
        }
        None => None,
    };
    let mut cfg = BinaryConfig::new(args.confidence, args.weighting.into());
    cfg.min_overlap = args.min_overlap;
    let reports = evaluate_all(ds, &cfg).map_err(|e| match e {
        BinaryError::BadConfidence(_) => Failure::usage(e),
        BinaryError::TooFewWorkers(_) => Failure::hard(e),
    })?;
    let records: Vec<Value> = reports
        .iter()
        .map(|r| worker_json(r, gold.as_ref().map(|g| (g, ds))))
        .collect();
    emit(args.output.as_deref(), &to_json_bytes(&round_json(Value::Array(records))))?;
    if reports.iter().all(|r| r.interval.is_failed()) {
        return Err(Failure::hard(anyhow!(
            "no worker could be evaluated (first failure: {})",
            reports[0].interval.failure().map_or("unknown", |f| f.describe())
        )));
    }
    Ok(())
}

fn kary_json(r: &KaryReport) -> Value {
    let est = r.estimate.as_ref();
    let workers: Vec<Value> = (0..3)
        .map(|i| {
            let grid: Vec<Vec<Value>> = r.intervals[i].iter().map(|row| row.iter().map(ci_json).collect()).collect();
            json!({
                "worker": r.workers.get(i),
                "p": est.map(|e| (0..r.arity).map(|a| e.p[i].row(a).to_vec()).collect::<Vec<_>>()),
                "clamped": est.map(|e| e.clamped[i]),
                "intervals": grid,
            })
        })
        .collect();
    json!({
        "workers": r.workers,
        "arity": r.arity,
        "confidence": r.confidence,
        "failed": r.failure.is_some(),
        "failure_reason": r.failure,
        "failure_detail": r.failure.map(|f| f.describe()),
        "selectivity": est.map(|e| e.selectivity.clone()),
        "per_worker": workers,
        "unusable_cells": r.unusable_cells,
        "diagnostics": est.map(|e| serde_json::to_value(&e.diagnostics).expect("diagnostics serialize")),
    })
}

fn cmd_evaluate_kary(args: &KaryArgs) -> CmdResult {
    let ds = load_input(&args.input)?.ds;
    let triples = match (&args.workers, args.auto_triples) {
            (Some(names), _) => {
                if names.len() != 3 {
                    return Err(Failure::usage(anyhow!(
                        "--workers needs exactly three worker ids, got {}",
                        names.len()
                    )));
                }
                let ids: Vec<usize> = names
                    .iter()
                    .map(|n| ds.worker_id(n))
                    .collect::<Result<_, _>>()
                    .map_err(Failure::usage)?;
                if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
                    return Err(Failure::usage(anyhow!("--workers must name three distinct workers")));
                }
                vec![(ids[0], ids[1], ids[2])]
            }
            (None, Some(t)) => {
                let found = triples_with_overlap(&ds, t, args.max_triples);
                if found.is_empty() {
                    return Err(Failure::hard(anyhow!(
                        "no worker triple shares at least {t} tasks; lower --auto-triples"
                    )));
                }
                found
            }
            (None, None) => unreachable!("clap requires --workers or --auto-triples"),
        };
    let mut cfg = KaryConfig::new(args.confidence);
    cfg.epsilon = args.epsilon;
    cfg.normalization = match args.normalization {
        NormalizationArg::Ratio => RowNormalization::DeltaOnRatio,
        NormalizationArg::RowSum => RowNormalization::ScaleByRowSum,
    };
    let reports: Vec<KaryReport> = triples.iter().map(|&t| evaluate_kary_triple(&ds, t, &cfg)).collect();
    let out = Value::Array(reports.iter().map(kary_json).collect());
    emit(args.output.as_deref(), &to_json_bytes(&round_json(out)))?;
    if reports.iter().all(|r| r.failure.is_some()) {
        let why = reports[0].failure.map_or("unknown", |f| f.describe());
        return Err(Failure::hard(anyhow!("every triple failed (first: {why})")));
    }
    Ok(())
}

fn parse_density(s: &str) -> Result<Density, Failure> {
    if s.eq_ignore_ascii_case("ramp") {
        return Ok(Density::Ramp);
    }
    let d: f64 = s
        .parse()
        .map_err(|_| Failure::usage(anyhow!("--d expects a number in (0, 1] or \"ramp\", got {s:?}")))?;
    Ok(Density::Uniform(d))
}

fn sim_config(args: &SimulateArgs) -> Result<SimConfig, Failure> {
    use Experiment::*;
    let (n, m, d) = match args.experiment {
        Coverage => (100, 7, "0.8"),
        SizeVsDensity => (300, 7, "0.8"),
        WeightComparison => (100, 7, "ramp"),
        KaryCoverage => (1000, 3, "1"),
        KarySize => (500, 3, "1"),
    };
    let density = parse_density(args.d.as_deref().unwrap_or(d))?;
    let n = args.n.unwrap_or(n);
    let mut cfg = match args.experiment {
        KaryCoverage | KarySize => {
            if args.m.is_some_and(|m| m != 3) {
                return Err(Failure::usage(anyhow!("k-ary experiments always use 3 workers")));
            }
            let k = if args.experiment == KarySize { 2 } else { args.arity };
            let fixture = KaryFixture::for_arity(k)
                .ok_or_else(|| Failure::usage(anyhow!("no fixture for arity {k} (use 2, 3 or 4)")))?;
            SimConfig::kary(fixture, n, density)
        }
        _ => SimConfig::binary(n, args.m.unwrap_or(m), density),
    };
    cfg.replications = args.reps;
    cfg.seed = args.seed;
    cfg.weighting = args.weighting.into();
    if args.fast {
        cfg = cfg.fast();
    }
    cfg.confidences = match (&args.confidence, args.experiment) {
        (Some(c), _) => c.clone(),
        (None, SizeVsDensity | KarySize) => vec![0.8],
        (None, _) => coverage_grid(),
    };
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn results_csv(results: &[ExperimentResult]) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "{CSV_HEADER}").expect("write to vec");
    for r in results {
        r.write_csv_rows(&mut out).expect("write to vec");
    }
    out
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let cfg = sim_config(args)?;
    let (csv, json_value) = match args.experiment {
        Experiment::WeightComparison => {
            let cmp = compare_weighting(&cfg).map_err(Failure::usage)?.rounded();
            (cmp.to_csv().into_bytes(), serde_json::to_value(&cmp))
        }
        Experiment::Coverage | Experiment::KaryCoverage => {
            let r = run_coverage_experiment(&cfg).map_err(Failure::usage)?.rounded();
            (results_csv(std::slice::from_ref(&r)), serde_json::to_value(vec![r]))
        }
        Experiment::SizeVsDensity | Experiment::KarySize => {
            let sweep = SizeSweep {
                densities: if args.d.is_some() { Vec::new() } else { density_grid() },
                confidences: cfg.confidences.clone(),
                arities: if args.experiment == Experiment::KarySize { args.arities.clone() } else { Vec::new() },
            };
            let rs: Vec<ExperimentResult> = run_size_experiment(&cfg, &sweep)
                .map_err(Failure::usage)?
                .iter()
                .map(ExperimentResult::rounded)
                .collect();
            (results_csv(&rs), serde_json::to_value(&rs))
        }
    };
    if let Some(path) = &args.json {
        let body = json!({
            "experiment": args.experiment.to_possible_value().map(|v| v.get_name().to_owned()),
            "seed": cfg.seed,
            "replications": cfg.replications,
            "results": json_value.expect("results serialize"),
        });
        write_atomic(path, &to_json_bytes(&round_json(body))).map_err(Failure::hard)?;
    }
    emit(args.output.as_deref(), &csv)
}

fn cmd_prune(args: &PruneArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Failure::usage(anyhow!("--threshold must lie in [0, 1]")));
    }
    let loaded = load_input(&args.input)?;
    require_binary(&loaded.ds)?;
    let out = prune_spammers(&loaded.ds, args.threshold).map_err(Failure::usage)?;
    let mut csv = Vec::new();
    write_responses_csv(&out.dataset, &mut csv).map_err(Failure::hard)?;
    write_atomic(&args.output, &csv).map_err(Failure::hard)?;
    let removed = serde_json::to_value(&out.removed).expect("removed list serializes");
    emit(args.removed.as_deref(), &to_json_bytes(&round_json(removed)))
}

fn configure_threads() {
    let Ok(raw) = std::env::var("CROWDGAUGE_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: could not set thread count: {e}");
            }
        }
        _ => eprintln!("warning: ignoring CROWDGAUGE_THREADS={raw:?}"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::EvaluateKary(a) => cmd_evaluate_kary(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Prune(a) => cmd_prune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
