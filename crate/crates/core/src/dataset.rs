//! Sparse worker/task response data.
//!
//! Workers and tasks are opaque string identifiers mapped to dense indices
//! in first-appearance order. Responses are labels in `1..=arity`; an
//! absent entry means the worker did not attempt the task. Per-worker
//! bitsets make pair and triple overlap counts a popcount away.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Label = u16;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: response {label} is outside 1..={arity}")]
    InvalidLabel { line: u64, label: i64, arity: Label },
    #[error("conflicting responses for task {task:?} by worker {worker:?}: {first} vs {second}")]
    Conflict {
        task: String,
        worker: String,
        first: Label,
        second: Label,
    },
    #[error("dataset contains no responses")]
    Empty,
    #[error("unknown worker {0:?}")]
    UnknownWorker(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("workers {a:?} and {b:?} have no task in common")]
    InsufficientOverlap { a: String, b: String },
    #[error("mapping is undefined for observed label {0}")]
    MappingUndefined(Label),
    #[error("operation needs binary responses, dataset has arity {0}")]
    NotBinary(Label),
    #[error("arity must be at least 2, got {0}")]
    InvalidArity(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed-size bitset over task indices.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TaskSet(Vec<u64>);

impl TaskSet {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn and2(&self, other: &TaskSet) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    fn and3(&self, b: &TaskSet, c: &TaskSet) -> usize {
        self.0
            .iter()
            .zip(&b.0)
            .zip(&c.0)
            .map(|((x, y), z)| (x & y & z).count_ones() as usize)
            .sum()
    }
}

/// Immutable sparse response log.
#[derive(Debug, Clone)]
pub struct ResponseDataset {
    workers: Vec<String>,
    tasks: Vec<String>,
    arity: Label,
    /// Worker-major `m × n` grid, 0 = not attempted.
    grid: Vec<Label>,
    attempted: Vec<TaskSet>,
    /// `by_label[w][l - 1]` = tasks where worker `w` answered `l`.
    by_label: Vec<Vec<TaskSet>>,
    worker_index: HashMap<String, usize>,
    task_index: HashMap<String, usize>,
}

impl PartialEq for ResponseDataset {
    fn eq(&self, other: &Self) -> bool {
        self.workers == other.workers
            && self.tasks == other.tasks
            && self.arity == other.arity
            && self.grid == other.grid
    }
}

impl ResponseDataset {
    /// Builds a dataset from a dense worker-major grid (0 = not attempted).
    pub fn from_grid(
        workers: Vec<String>,
        tasks: Vec<String>,
        arity: Label,
        grid: Vec<Label>,
    ) -> Result<Self, DatasetError> {
        if arity < 2 {
            return Err(DatasetError::InvalidArity(arity.into()));
        }
        assert_eq!(grid.len(), workers.len() * tasks.len(), "grid shape");
        if let Some(&bad) = grid.iter().find(|&&l| l > arity) {
            return Err(DatasetError::InvalidLabel {
                line: 0,
                label: bad.into(),
                arity,
            });
        }
        let n = tasks.len();
        let mut attempted = Vec::with_capacity(workers.len());
        let mut by_label = Vec::with_capacity(workers.len());
        for w in 0..workers.len() {
            let mut att = TaskSet::new(n);
            let mut labels = vec![TaskSet::new(n); arity as usize];
            for (t, &l) in grid[w * n..(w + 1) * n].iter().enumerate() {
                if l > 0 {
                    att.insert(t);
                    labels[l as usize - 1].insert(t);
                }
            }
            attempted.push(att);
            by_label.push(labels);
        }
        let worker_index = workers.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let task_index = tasks.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            workers,
            tasks,
            arity,
            grid,
            attempted,
            by_label,
            worker_index,
            task_index,
        })
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn arity(&self) -> Label {
        self.arity
    }

    pub fn workers(&self) -> &[String] {
        &self.workers
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn worker_name(&self, w: usize) -> &str {
        &self.workers[w]
    }

    pub fn worker_id(&self, name: &str) -> Result<usize, DatasetError> {
        self.worker_index
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::UnknownWorker(name.to_owned()))
    }

    pub fn task_id(&self, name: &str) -> Result<usize, DatasetError> {
        self.task_index
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::UnknownTask(name.to_owned()))
    }

    /// Label given by worker `w` on task `t`, if attempted.
    pub fn response(&self, w: usize, t: usize) -> Option<Label> {
        match self.grid[w * self.tasks.len() + t] {
            0 => None,
            l => Some(l),
        }
    }

    /// Row of the dense grid for worker `w` (0 = not attempted).
    pub fn worker_row(&self, w: usize) -> &[Label] {
        let n = self.tasks.len();
        &self.grid[w * n..(w + 1) * n]
    }

    pub fn num_responses(&self) -> usize {
        self.attempted.iter().map(TaskSet::len).sum()
    }

    pub fn tasks_attempted(&self, w: usize) -> usize {
        self.attempted[w].len()
    }

    /// `c_ij`: tasks attempted by both workers.
    pub fn pair_overlap(&self, i: usize, j: usize) -> usize {
        self.attempted[i].and2(&self.attempted[j])
    }

    /// `c_ijk`: tasks attempted by all three workers.
    pub fn triple_overlap(&self, i: usize, j: usize, k: usize) -> usize {
        self.attempted[i].and3(&self.attempted[j], &self.attempted[k])
    }

    /// Co-attempted tasks on which the two workers gave the same label.
    pub fn agreements(&self, i: usize, j: usize) -> usize {
        self.by_label[i]
            .iter()
            .zip(&self.by_label[j])
            .map(|(a, b)| a.and2(b))
            .sum()
    }

    /// `q̂_ij`, or `None` when the pair shares no task.
    pub fn agreement_rate(&self, i: usize, j: usize) -> Option<f64> {
        match self.pair_overlap(i, j) {
            0 => None,
            c => Some(self.agreements(i, j) as f64 / c as f64),
        }
    }

    /// Dataset restricted to the given workers (in the given order). Task
    /// list and arity are kept.
    pub fn select_workers(&self, keep: &[usize]) -> ResponseDataset {
        let mut grid = Vec::with_capacity(keep.len() * self.tasks.len());
        for &w in keep {
            grid.extend_from_slice(self.worker_row(w));
        }
        let workers = keep.iter().map(|&w| self.workers[w].clone()).collect();
        ResponseDataset::from_grid(workers, self.tasks.clone(), self.arity, grid)
            .expect("labels already validated")
    }

    /// Iterates `(task, worker, label)` in task-major order.
    pub fn iter_responses(&self) -> impl Iterator<Item = (usize, usize, Label)> + '_ {
        let m = self.workers.len();
        (0..self.tasks.len()).flat_map(move |t| {
            (0..m).filter_map(move |w| self.response(w, t).map(|l| (t, w, l)))
        })
    }

    /// Removes a uniformly chosen `fraction` of the responses, sampled
    /// without replacement.
    pub fn drop_random_responses<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Self {
        let present: Vec<usize> = self
            .grid
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(i, _)| i)
            .collect();
        let drop = ((present.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let mut grid = self.grid.clone();
        for idx in sample(rng, present.len(), drop) {
            grid[present[idx]] = 0;
        }
        ResponseDataset::from_grid(self.workers.clone(), self.tasks.clone(), self.arity, grid)
            .expect("labels already validated")
    }
}

/// Incremental construction with de-duplication.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    declared_arity: Option<Label>,
    workers: Vec<String>,
    tasks: Vec<String>,
    worker_index: HashMap<String, usize>,
    task_index: HashMap<String, usize>,
    entries: HashMap<(usize, usize), Label>,
    max_label: Label,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_arity(arity: Label) -> Self {
        Self {
            declared_arity: Some(arity),
            ..Self::default()
        }
    }

    /// Adds one response. `line` is only used in error messages.
    pub fn add(&mut self, task: &str, worker: &str, label: i64, line: u64) -> Result<(), DatasetError> {
        let limit = self.declared_arity.unwrap_or(Label::MAX);
        if label < 1 || label > i64::from(limit) {
            return Err(DatasetError::InvalidLabel {
                line,
                label,
                arity: limit,
            });
        }
        let label = label as Label;
        let t = intern(&mut self.tasks, &mut self.task_index, task);
        let w = intern(&mut self.workers, &mut self.worker_index, worker);
        match self.entries.get(&(w, t)) {
            Some(&prev) if prev != label => Err(DatasetError::Conflict {
                task: task.to_owned(),
                worker: worker.to_owned(),
                first: prev,
                second: label,
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert((w, t), label);
                self.max_label = self.max_label.max(label);
                Ok(())
            }
        }
    }

    pub fn build(self) -> Result<ResponseDataset, DatasetError> {
        if self.entries.is_empty() {
            return Err(DatasetError::Empty);
        }
        let arity = self.declared_arity.unwrap_or(self.max_label).max(2);
        let n = self.tasks.len();
        let mut grid = vec![0; self.workers.len() * n];
        for ((w, t), l) in self.entries {
            grid[w * n + t] = l;
        }
        ResponseDataset::from_grid(self.workers, self.tasks, arity, grid)
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&i) = index.get(name) {
        return i;
    }
    names.push(name.to_owned());
    index.insert(name.to_owned(), names.len() - 1);
    names.len() - 1
}

/// Input encodings accepted by [`load_responses`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guesses from a file extension; anything but `.json` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Reads a response log.
///
/// CSV: header `task_id,worker_id,response`, optional `# arity=K` comment.
/// JSON: array of `{"task", "worker", "response"}` objects.
pub fn load_responses<R: Read>(mut source: R, format: Format) -> Result<ResponseDataset, DatasetError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    match format {
        Format::Csv => load_csv(&text),
        Format::Json => load_json(&text),
    }
}

fn declared_arity(text: &str) -> Result<Option<Label>, DatasetError> {
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        if let Some(value) = comment.trim().strip_prefix("arity=") {
            let k: i64 = value.trim().parse().map_err(|_| DatasetError::Parse {
                line: i as u64 + 1,
                message: format!("bad arity declaration {value:?}"),
            })?;
            if !(2..=i64::from(Label::MAX)).contains(&k) {
                return Err(DatasetError::InvalidArity(k));
            }
            return Ok(Some(k as Label));
        }
    }
    Ok(None)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes())
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<(), DatasetError> {
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    DatasetError::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_label(field: &str, line: u64) -> Result<i64, DatasetError> {
    field.parse().map_err(|_| DatasetError::Parse {
        line,
        message: format!("response {field:?} is not an integer"),
    })
}

fn load_csv(text: &str) -> Result<ResponseDataset, DatasetError> {
    let arity = declared_arity(text)?;
    let mut builder = match arity {
        Some(k) => DatasetBuilder::with_arity(k),
        None => DatasetBuilder::new(),
    };
    let mut reader = csv_reader(text);
    let headers = match reader.headers() {
        Ok(h) if h.is_empty() => return Err(DatasetError::Empty),
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    check_header(&headers, &["task_id", "worker_id", "response"])?;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let label = parse_label(&record[2], line)?;
        builder.add(&record[0], &record[1], label, line)?;
    }
    builder.build()
}

#[derive(Deserialize)]
struct JsonResponse {
    task: serde_json::Value,
    worker: serde_json::Value,
    response: i64,
}

fn json_id(v: &serde_json::Value, line: u64) -> Result<String, DatasetError> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(DatasetError::Parse {
            line,
            message: format!("identifier must be a string or number, found {other}"),
        }),
    }
}

fn load_json(text: &str) -> Result<ResponseDataset, DatasetError> {
    if text.trim().is_empty() {
        return Err(DatasetError::Empty);
    }
    let rows: Vec<JsonResponse> = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut builder = DatasetBuilder::new();
    for (i, row) in rows.iter().enumerate() {
        // JSON has no line per record; report the 1-based element index
        let pos = i as u64 + 1;
        builder.add(&json_id(&row.task, pos)?, &json_id(&row.worker, pos)?, row.response, pos)?;
    }
    builder.build()
}

/// Writes the response log in the CSV layout [`load_responses`] reads.
pub fn write_responses_csv<W: std::io::Write>(ds: &ResponseDataset, out: W) -> Result<(), DatasetError> {
    let mut out = out;
    writeln!(out, "# arity={}", ds.arity())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_id", "worker_id", "response"])
        .map_err(csv_error)?;
    for (t, wk, l) in ds.iter_responses() {
        w.write_record([ds.tasks()[t].as_str(), ds.worker_name(wk), &l.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// True responses for (some of) a dataset's tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldLabels {
    labels: Vec<Option<Label>>,
}

impl GoldLabels {
    /// `labels[t]` is the truth for task index `t`.
    pub fn from_task_labels(labels: Vec<Option<Label>>) -> Self {
        Self { labels }
    }

    /// Applies a table from [`relabel_table`]; labels it leaves undefined
    /// are dropped.
    pub fn relabel(&self, table: &[Option<Label>]) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .map(|l| l.and_then(|l| table.get(l as usize - 1).copied().flatten()))
                .collect(),
        }
    }

    pub fn get(&self, task: usize) -> Option<Label> {
        self.labels.get(task).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of worker `w`'s gold-covered responses that are wrong.
    pub fn error_rate(&self, ds: &ResponseDataset, w: usize) -> Option<f64> {
        let (mut wrong, mut total) = (0usize, 0usize);
        for t in 0..ds.num_tasks() {
            if let (Some(r), Some(g)) = (ds.response(w, t), self.get(t)) {
                total += 1;
                wrong += usize::from(r != g);
            }
        }
        (total > 0).then(|| wrong as f64 / total as f64)
    }

    /// Empirical `P_w(truth, response)` over gold-covered tasks; rows
    /// without any observation are `None`.
    pub fn response_matrix(&self, ds: &ResponseDataset, w: usize) -> Vec<Option<Vec<f64>>> {
        let k = ds.arity() as usize;
        let mut counts = vec![vec![0usize; k]; k];
        for t in 0..ds.num_tasks() {
            if let (Some(r), Some(g)) = (ds.response(w, t), self.get(t)) {
                counts[g as usize - 1][r as usize - 1] += 1;
            }
        }
        counts
            .into_iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row.iter().map(|&c| c as f64 / total as f64).collect())
            })
            .collect()
    }
}

/// Reads a gold CSV (`task_id,response`) against `ds`.
pub fn load_gold<R: Read>(mut source: R, ds: &ResponseDataset) -> Result<GoldLabels, DatasetError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers().map_err(csv_error)?.clone();
    check_header(&headers, &["task_id", "response"])?;
    let mut labels = vec![None; ds.num_tasks()];
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let label = parse_label(&record[1], line)?;
        if label < 1 || label > i64::from(ds.arity()) {
            return Err(DatasetError::InvalidLabel {
                line,
                label,
                arity: ds.arity(),
            });
        }
        let t = ds.task_id(&record[0])?;
        labels[t] = Some(label as Label);
    }
    Ok(GoldLabels { labels })
}

pub fn write_gold_csv<W: std::io::Write>(
    ds: &ResponseDataset,
    gold: &GoldLabels,
    out: W,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_id", "response"]).map_err(csv_error)?;
    for (t, name) in ds.tasks().iter().enumerate() {
        if let Some(l) = gold.get(t) {
            w.write_record([name.as_str(), &l.to_string()]).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pairwise agreement and overlap bookkeeping for a worker subset.
///
/// Keys are dataset worker indices in ascending order; the accessors
/// accept any argument order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub workers: Vec<usize>,
    pub pair_overlap: BTreeMap<(usize, usize), usize>,
    pub pair_agreement: BTreeMap<(usize, usize), f64>,
    pub triple_overlap: BTreeMap<(usize, usize, usize), usize>,
}

fn key2(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn key3(a: usize, b: usize, c: usize) -> (usize, usize, usize) {
    let mut v = [a, b, c];
    v.sort_unstable();
    (v[0], v[1], v[2])
}

impl AgreementStats {
    pub fn overlap(&self, a: usize, b: usize) -> Option<usize> {
        self.pair_overlap.get(&key2(a, b)).copied()
    }

    pub fn agreement(&self, a: usize, b: usize) -> Option<f64> {
        self.pair_agreement.get(&key2(a, b)).copied()
    }

    pub fn triple(&self, a: usize, b: usize, c: usize) -> Option<usize> {
        self.triple_overlap.get(&key3(a, b, c)).copied()
    }
}

fn resolve(ds: &ResponseDataset, names: &[&str]) -> Result<Vec<usize>, DatasetError> {
    names.iter().map(|n| ds.worker_id(n)).collect()
}

fn counts_only(ds: &ResponseDataset, idx: &[usize]) -> AgreementStats {
    let mut pair_overlap = BTreeMap::new();
    let mut triple_overlap = BTreeMap::new();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate().skip(a + 1) {
            pair_overlap.insert(key2(i, j), ds.pair_overlap(i, j));
            for &k in &idx[b + 1..] {
                triple_overlap.insert(key3(i, j, k), ds.triple_overlap(i, j, k));
            }
        }
    }
    AgreementStats {
        workers: idx.to_vec(),
        pair_overlap,
        pair_agreement: BTreeMap::new(),
        triple_overlap,
    }
}

/// Exact pair and triple co-attempt counts for the named workers.
pub fn overlap_counts(ds: &ResponseDataset, workers: &[&str]) -> Result<AgreementStats, DatasetError> {
    Ok(counts_only(ds, &resolve(ds, workers)?))
}

/// Counts plus `q̂_ij` for every pair; every pair must share a task.
pub fn agreement_rates(ds: &ResponseDataset, workers: &[&str]) -> Result<AgreementStats, DatasetError> {
    agreement_rates_by_index(ds, &resolve(ds, workers)?)
}

pub fn agreement_rates_by_index(ds: &ResponseDataset, idx: &[usize]) -> Result<AgreementStats, DatasetError> {
    let mut stats = counts_only(ds, idx);
    for (&(i, j), &c) in &stats.pair_overlap {
        if c == 0 {
            return Err(DatasetError::InsufficientOverlap {
                a: ds.worker_name(i).to_owned(),
                b: ds.worker_name(j).to_owned(),
            });
        }
        stats
            .pair_agreement
            .insert((i, j), ds.agreements(i, j) as f64 / c as f64);
    }
    Ok(stats)
}

/// New label for each old label `1..=k` under `mapping`, with the image
/// ranked and renumbered to `1..=k'`. `None` where the mapping is undefined.
pub fn relabel_table(k: Label, mapping: impl Fn(Label) -> Option<i64>) -> Vec<Option<Label>> {
    let images: Vec<Option<i64>> = (1..=k).map(&mapping).collect();
    let mut distinct: Vec<i64> = images.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let rank: HashMap<i64, Label> = distinct
        .iter()
        .enumerate()
        .map(|(r, &v)| (v, r as Label + 1))
        .collect();
    images.iter().map(|i| i.map(|v| rank[&v])).collect()
}

/// Relabels every response through `mapping`.
///
/// The image of `1..=k` (where defined) is ranked and renumbered to
/// `1..=k'`, so the output labels are contiguous.
pub fn reduce_arity(
    ds: &ResponseDataset,
    mapping: impl Fn(Label) -> Option<i64>,
) -> Result<ResponseDataset, DatasetError> {
    let table = relabel_table(ds.arity(), mapping);
    let mut grid = Vec::with_capacity(ds.grid.len());
    for &l in &ds.grid {
        if l == 0 {
            grid.push(0);
            continue;
        }
        grid.push(table[l as usize - 1].ok_or(DatasetError::MappingUndefined(l))?);
    }
    let new_arity = table.iter().flatten().copied().max().unwrap_or(0).max(2);
    ResponseDataset::from_grid(ds.workers.clone(), ds.tasks.clone(), new_arity, grid)
}

/// Majority-vote label per task (`None` when nobody answered). Ties go to
/// the smallest label.
pub fn majority_labels(ds: &ResponseDataset) -> Vec<Option<Label>> {
    let k = ds.arity() as usize;
    let mut votes = vec![0usize; k];
    (0..ds.num_tasks())
        .map(|t| {
            votes.iter_mut().for_each(|v| *v = 0);
            for w in 0..ds.num_workers() {
                if let Some(l) = ds.response(w, t) {
                    votes[l as usize - 1] += 1;
                }
            }
            let best = *votes.iter().max()?;
            if best == 0 {
                return None;
            }
            votes.iter().position(|&v| v == best).map(|i| i as Label + 1)
        })
        .collect()
}

/// Fraction of each worker's attempted tasks where the worker disagrees
/// with the majority label (0 for a worker with no responses).
pub fn majority_disagreement_rates(ds: &ResponseDataset) -> Vec<f64> {
    let majority = majority_labels(ds);
    (0..ds.num_workers())
        .map(|w| {
            let (mut total, mut off) = (0usize, 0usize);
            for (t, maj) in majority.iter().enumerate() {
                if let (Some(r), Some(m)) = (ds.response(w, t), maj) {
                    total += 1;
                    off += usize::from(r != *m);
                }
            }
            if total == 0 {
                0.0
            } else {
                off as f64 / total as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedWorker {
    pub worker: String,
    pub approx_error_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub dataset: ResponseDataset,
    /// Sorted by approximate error rate, highest first.
    pub removed: Vec<RemovedWorker>,
}

pub const DEFAULT_SPAM_THRESHOLD: f64 = 0.4;

/// Drops workers whose majority-disagreement rate exceeds `threshold`.
/// The majority is computed once, on the unpruned data, with each
/// worker's own vote included.
pub fn prune_spammers(ds: &ResponseDataset, threshold: f64) -> Result<PruneOutcome, DatasetError> {
    if ds.arity() != 2 {
        return Err(DatasetError::NotBinary(ds.arity()));
    }
    let rates = majority_disagreement_rates(ds);
    let (mut keep, mut removed) = (Vec::new(), Vec::new());
    for (w, &rate) in rates.iter().enumerate() {
        if rate > threshold {
            removed.push((w, rate));
        } else {
            keep.push(w);
        }
    }
    removed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PruneOutcome {
        dataset: ds.select_workers(&keep),
        removed: removed
            .into_iter()
            .map(|(w, rate)| RemovedWorker {
                worker: ds.worker_name(w).to_owned(),
                approx_error_rate: rate,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranged(workers: &[(&str, std::ops::RangeInclusive<usize>)], n: usize, label: impl Fn(&str, usize) -> Label) -> ResponseDataset {
        let mut b = DatasetBuilder::with_arity(2);
        for t in 1..=n {
            for (w, range) in workers {
                if range.contains(&t) {
                    b.add(&format!("t{t}"), w, label(w, t).into(), 0).unwrap();
                }
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn csv_basic() {
        let ds = load_responses("task_id,worker_id,response\nt1,w1,1\nt1,w2,2\n".as_bytes(), Format::Csv).unwrap();
        assert_eq!((ds.num_tasks(), ds.num_workers(), ds.arity()), (1, 2, 2));
        assert_eq!(ds.response(1, 0), Some(2));
    }

    #[test]
    fn csv_declared_arity_wins() {
        let text = "# arity=5\ntask_id,worker_id,response\nt1,w1,1\nt1,w2,2\n";
        let ds = load_responses(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(ds.arity(), 5);
        let bad = "# arity=2\ntask_id,worker_id,response\nt1,w1,3\n";
        assert!(matches!(
            load_responses(bad.as_bytes(), Format::Csv),
            Err(DatasetError::InvalidLabel { label: 3, .. })
        ));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(load_responses("".as_bytes(), Format::Csv), Err(DatasetError::Empty)));
        assert!(matches!(
            load_responses("task_id,worker_id,response\n".as_bytes(), Format::Csv),
            Err(DatasetError::Empty)
        ));
        assert!(matches!(load_responses("[]".as_bytes(), Format::Json), Err(DatasetError::Empty)));
    }

    #[test]
    fn duplicates_dedup_and_conflicts_fail() {
        let ds = load_responses(
            "task_id,worker_id,response\nt1,w1,1\nt1,w1,1\n".as_bytes(),
            Format::Csv,
        )
        .unwrap();
        assert_eq!(ds.num_responses(), 1);
        let err = load_responses(
            "task_id,worker_id,response\nt1,w1,1\nt1,w1,2\n".as_bytes(),
            Format::Csv,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Conflict { first: 1, second: 2, .. }));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = load_responses(
            "task_id,worker_id,response\nt1,w1,1\nt2,w1,x\n".as_bytes(),
            Format::Csv,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 3, .. }), "{err}");
        let err = load_responses(
            "task_id,worker_id,response\nt1,w1\n".as_bytes(),
            Format::Csv,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err}");
        let err = load_responses(
            "task_id,worker_id,response\nt1,w1,0\n".as_bytes(),
            Format::Csv,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::InvalidLabel { line: 2, label: 0, .. }));
        assert!(load_responses("task,worker,response\nt1,w1,1\n".as_bytes(), Format::Csv).is_err());
    }

    #[test]
    fn json_input() {
        let text = r#"[{"task":"t1","worker":"w1","response":1},{"task":2,"worker":"w2","response":3}]"#;
        let ds = load_responses(text.as_bytes(), Format::Json).unwrap();
        assert_eq!(ds.arity(), 3);
        assert_eq!(ds.tasks(), ["t1", "2"]);
        let bad = r#"[{"task":"t1","worker":"w1","response":-1}]"#;
        assert!(matches!(
            load_responses(bad.as_bytes(), Format::Json),
            Err(DatasetError::InvalidLabel { line: 1, .. })
        ));
    }

    #[test]
    fn overlap_fixture_from_sliding_windows() {
        let ds = ranged(&[("w1", 1..=80), ("w2", 21..=100), ("w3", 11..=90)], 100, |_, _| 1);
        let stats = overlap_counts(&ds, &["w1", "w2", "w3"]).unwrap();
        let id = |n| ds.worker_id(n).unwrap();
        let (a, b, c) = (id("w1"), id("w2"), id("w3"));
        assert_eq!(stats.overlap(a, b), Some(60));
        assert_eq!(stats.overlap(a, c), Some(70));
        assert_eq!(stats.overlap(b, c), Some(70));
        assert_eq!(stats.triple(c, a, b), Some(60));
        assert_eq!(stats.overlap(b, a), stats.overlap(a, b));
    }

    #[test]
    fn disjoint_and_regular_overlaps() {
        let ds = ranged(&[("w1", 1..=50), ("w2", 51..=100)], 100, |_, _| 1);
        assert_eq!(ds.pair_overlap(0, 1), 0);
        assert!(matches!(
            agreement_rates(&ds, &["w1", "w2"]),
            Err(DatasetError::InsufficientOverlap { .. })
        ));
        let full = ranged(&[("a", 1..=30), ("b", 1..=30), ("c", 1..=30)], 30, |_, _| 2);
        assert_eq!(full.pair_overlap(0, 2), 30);
        assert_eq!(full.triple_overlap(0, 1, 2), 30);
        assert_eq!(overlap_counts(&full, &["zz"]).unwrap_err().to_string(), "unknown worker \"zz\"");
    }

    #[test]
    fn agreement_over_shared_tasks_only() {
        // w1 and w2 share tasks 21..=80 and disagree on the first 10 of them
        let ds = ranged(&[("w1", 1..=80), ("w2", 21..=100)], 100, |w, t| {
            if w == "w2" && (21..=30).contains(&t) {
                2
            } else {
                1
            }
        });
        let stats = agreement_rates(&ds, &["w1", "w2"]).unwrap();
        assert!((stats.agreement(1, 0).unwrap() - 50.0 / 60.0).abs() < 1e-15);
        let same = ranged(&[("a", 1..=10), ("b", 1..=10)], 10, |_, t| (t % 2 + 1) as Label);
        assert_eq!(same.agreement_rate(0, 1), Some(1.0));
    }

    #[test]
    fn reduce_arity_maps_and_compacts() {
        let mut b = DatasetBuilder::with_arity(6);
        for g in 1..=6 {
            b.add(&format!("t{g}"), "w", g, 0).unwrap();
        }
        let ds = b.build().unwrap();
        let reduced = reduce_arity(&ds, |g| Some(i64::from((g - 1) / 2 + 1))).unwrap();
        assert_eq!(reduced.arity(), 3);
        let labels: Vec<_> = (0..6).map(|t| reduced.response(0, t).unwrap()).collect();
        assert_eq!(labels, vec![1, 1, 2, 2, 3, 3]);
        assert_eq!(reduce_arity(&ds, |g| Some(g.into())).unwrap(), ds);
        let undefined = reduce_arity(&ds, |g| (g < 6).then_some(1));
        assert!(matches!(undefined, Err(DatasetError::MappingUndefined(6))));
    }

    #[test]
    fn eleven_ary_to_binary() {
        let mut b = DatasetBuilder::with_arity(11);
        for g in 1..=11 {
            b.add(&format!("t{g}"), "w", g, 0).unwrap();
        }
        let ds = b.build().unwrap();
        let bin = reduce_arity(&ds, |g| Some(if g <= 6 { 1 } else { 2 })).unwrap();
        assert_eq!(bin.arity(), 2);
        assert_eq!(bin.response(0, 5), Some(1));
        assert_eq!(bin.response(0, 6), Some(2));
    }

    fn prune_fixture() -> ResponseDataset {
        // 10 tasks; w1 and w2 always answer 1; w3 answers 2 on half
        let mut b = DatasetBuilder::with_arity(2);
        for t in 0..10 {
            b.add(&format!("t{t}"), "w1", 1, 0).unwrap();
            b.add(&format!("t{t}"), "w2", 1, 0).unwrap();
            b.add(&format!("t{t}"), "w3", if t < 5 { 2 } else { 1 }, 0).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn prune_removes_half_wrong_worker() {
        let ds = prune_fixture();
        // hand count: majority is 1 everywhere, w3 disagrees on 5 of 10
        let rates = majority_disagreement_rates(&ds);
        assert_eq!(rates, vec![0.0, 0.0, 0.5]);
        let out = prune_spammers(&ds, DEFAULT_SPAM_THRESHOLD).unwrap();
        assert_eq!(out.removed, vec![RemovedWorker { worker: "w3".into(), approx_error_rate: 0.5 }]);
        assert_eq!(out.dataset.workers(), ["w1", "w2"]);
    }

    #[test]
    fn prune_threshold_extremes() {
        let ds = prune_fixture();
        assert!(prune_spammers(&ds, 1.0).unwrap().removed.is_empty());
        let all = prune_spammers(&ds, 0.0).unwrap();
        assert_eq!(all.removed.len(), 1);
        let six = reduce_arity(&ds, |g| Some(g.into())).unwrap();
        assert!(prune_spammers(&six, 0.4).is_ok());
        let mut b = DatasetBuilder::with_arity(3);
        b.add("t", "w", 3, 0).unwrap();
        assert!(matches!(prune_spammers(&b.build().unwrap(), 0.4), Err(DatasetError::NotBinary(3))));
    }

    #[test]
    fn majority_tie_goes_to_smallest_label() {
        let mut b = DatasetBuilder::with_arity(2);
        b.add("t", "a", 2, 0).unwrap();
        b.add("t", "b", 1, 0).unwrap();
        let ds = b.build().unwrap();
        assert_eq!(majority_labels(&ds), vec![Some(1)]);
        assert_eq!(majority_disagreement_rates(&ds), vec![1.0, 0.0]);
    }

    #[test]
    fn csv_round_trip() {
        let ds = prune_fixture();
        let mut buf = Vec::new();
        write_responses_csv(&ds, &mut buf).unwrap();
        let back = load_responses(buf.as_slice(), Format::Csv).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn gold_labels() {
        let ds = prune_fixture();
        let gold = load_gold("task_id,response\nt0,1\nt1,2\n".as_bytes(), &ds).unwrap();
        assert_eq!(gold.len(), 2);
        assert_eq!(gold.error_rate(&ds, 0), Some(0.5));
        assert!(load_gold("task_id,response\nnope,1\n".as_bytes(), &ds).is_err());
        let mut buf = Vec::new();
        write_gold_csv(&ds, &gold, &mut buf).unwrap();
        assert_eq!(load_gold(buf.as_slice(), &ds).unwrap(), gold);
    }

    #[test]
    fn random_drop_removes_requested_fraction() {
        use rand::SeedableRng;
        let ds = ranged(&[("a", 1..=50), ("b", 1..=50)], 50, |_, _| 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let thinned = ds.drop_random_responses(0.2, &mut rng);
        assert_eq!(thinned.num_responses(), 80);
    }
}
