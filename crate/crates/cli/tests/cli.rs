use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crowdgauge::dataset::{load_responses, write_responses_csv, Format};
use crowdgauge::simulator::{gen_binary_responses, gen_kary_responses, Density, KaryFixture};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdgauge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn csv_from(rows: impl IntoIterator<Item = (String, String, u16)>) -> String {
    let mut s = String::from("task_id,worker_id,response\n");
    for (t, w, l) in rows {
        s.push_str(&format!("{t},{w},{l}\n"));
    }
    s
}

/// Three workers, 100 tasks, each wrong on its own 9 tasks: every pair
/// agrees on 82.
fn agreement_fixture() -> String {
    let mut rows = Vec::new();
    for w in 0..3 {
        for t in 0..100 {
            let wrong = (9 * w..9 * (w + 1)).contains(&t);
            rows.push((format!("t{t}"), format!("w{}", w + 1), if wrong { 2 } else { 1 }));
        }
    }
    csv_from(rows)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn evaluate_regular_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "r.csv", &agreement_fixture());
    let out = run(&["evaluate", "--input", path_str(&input), "--confidence", "0.95"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    let recs = v.as_array().unwrap();
    assert_eq!(recs.len(), 3);
    for r in recs {
        let est = r["estimate"].as_f64().unwrap();
        assert!((est - 0.1).abs() < 1e-9, "{r}");
        let (lo, hi) = (r["lower"].as_f64().unwrap(), r["upper"].as_f64().unwrap());
        assert!(((est - lo) - (hi - est)).abs() < 1e-8);
        assert_eq!(r["method"], "three_worker");
        assert_eq!(r["triples_used"], 1);
        assert_eq!(r["failed"], false);
    }
}

#[test]
fn evaluate_writes_output_file_and_gold_columns() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "r.csv", &agreement_fixture());
    let gold: String = std::iter::once("task_id,response\n".to_owned())
        .chain((0..100).map(|t| format!("t{t},1\n")))
        .collect();
    let gold = write(dir.path(), "gold.csv", &gold);
    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--input",
        path_str(&input),
        "--gold",
        path_str(&gold),
        "--output",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for r in v.as_array().unwrap() {
        assert!((r["proxy_error_rate"].as_f64().unwrap() - 0.09).abs() < 1e-12);
        assert_eq!(r["covered"], true);
    }
}

#[test]
fn bad_confidence_is_usage_error() {
    let out = run(&["evaluate", "--input", "missing.csv", "--confidence", "1.5"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unparsable_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "task_id,worker_id,response\nt1,w1,zero\n");
    assert_eq!(code(&run(&["evaluate", "--input", path_str(&input)])), 2);
    assert_eq!(code(&run(&["evaluate", "--input", "/nonexistent/file.csv"])), 2);
}

#[test]
fn isolated_worker_is_a_per_record_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = gen_binary_responses(&[0.1, 0.2, 0.1, 0.2], 80, Density::Uniform(1.0), 3);
    let mut rows: Vec<(String, String, u16)> = ds
        .iter_responses()
        .map(|(t, w, l)| (ds.tasks()[t].clone(), ds.workers()[w].clone(), l))
        .collect();
    for t in 0..10 {
        rows.push((format!("extra{t}"), "loner".into(), 1));
    }
    let input = write(dir.path(), "iso.csv", &csv_from(rows));
    let out = run(&["evaluate", "--input", path_str(&input)]);
    assert_eq!(code(&out), 0);
    let v = json_of(&out);
    let loner = v.as_array().unwrap().iter().find(|r| r["worker"] == "loner").unwrap();
    assert_eq!(loner["failed"], true);
    assert_eq!(loner["failure_reason"], "insufficient_connectivity");
    let others = v.as_array().unwrap().iter().filter(|r| r["failed"] == false).count();
    assert_eq!(others, 4);
}

#[test]
fn too_few_workers_is_hard_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "two.csv", "task_id,worker_id,response\nt1,a,1\nt1,b,2\n");
    assert_eq!(code(&run(&["evaluate", "--input", path_str(&input)])), 3);
}

#[test]
fn non_binary_needs_map() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for t in 0..60 {
        for (w, shift) in [("a", 0), ("b", 1), ("c", 0)] {
            // six grades; mapping pairs them into three, then min(.,2) folds to binary
            let g = (t % 6 + shift) % 6 + 1;
            rows.push((format!("t{t}"), w.to_owned(), g as u16));
        }
    }
    let input = write(dir.path(), "grades.csv", &csv_from(rows));
    let out = run(&["evaluate", "--input", path_str(&input)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--map"));
    let out = run(&["evaluate", "--input", path_str(&input), "--map", "g->min(floor((g-1)/3),1)+1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_of(&out).as_array().unwrap().len(), 3);
    let out = run(&["evaluate", "--input", path_str(&input), "--map", "g->floor(("]);
    assert_eq!(code(&out), 1);
}

#[test]
fn kary_fixture_grids_are_row_stochastic() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _, _) = gen_kary_responses(KaryFixture::Arity3, 1000, Density::Uniform(1.0), None, 17);
    let mut buf = Vec::new();
    write_responses_csv(&ds, &mut buf).unwrap();
    let input = dir.path().join("k3.csv");
    std::fs::write(&input, buf).unwrap();
    let out = run(&["evaluate-kary", "--input", path_str(&input), "--workers", "w1,w2,w3", "--confidence", "0.9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    let rep = &v[0];
    assert_eq!(rep["arity"], 3);
    assert_eq!(rep["failed"], false);
    let s: f64 = rep["selectivity"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((s - 1.0).abs() < 1e-6);
    for w in rep["per_worker"].as_array().unwrap() {
        for row in w["intervals"].as_array().unwrap() {
            let mids: Vec<f64> = row.as_array().unwrap().iter().filter_map(|c| c["estimate"].as_f64()).collect();
            if mids.len() == 3 {
                assert!((mids.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{row}");
            }
        }
    }
}

#[test]
fn kary_worker_and_triple_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "r.csv", &agreement_fixture());
    assert_eq!(code(&run(&["evaluate-kary", "--input", path_str(&input), "--workers", "w1,w2"])), 1);
    assert_eq!(code(&run(&["evaluate-kary", "--input", path_str(&input), "--workers", "w1,w2,nobody"])), 1);
    assert_eq!(code(&run(&["evaluate-kary", "--input", path_str(&input)])), 1);

    let sparse: Vec<(String, String, u16)> = (0..30)
        .flat_map(|t| ["a", "b", "c", "d"].map(|w| (format!("t{t}"), w.to_owned(), 1 + (t % 2) as u16)))
        .collect();
    let sparse = write(dir.path(), "sparse.csv", &csv_from(sparse));
    let out = run(&["evaluate-kary", "--input", path_str(&sparse), "--auto-triples", "60"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("60"));
}

#[test]
fn simulate_coverage_grid_and_determinism() {
    let args = ["simulate", "coverage", "--n", "100", "--m", "7", "--d", "0.8", "--reps", "20", "--seed", "42"];
    let a = run(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 19);
    assert_eq!(&rows[0][4], "0.05");
    assert_eq!(&rows[18][4], "0.95");
    assert!(rows.iter().all(|r| &r[11] == "42"));
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_json_and_files_are_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let csv = dir.path().join(format!("out{i}.csv"));
        let json = dir.path().join(format!("out{i}.json"));
        let o = run(&[
            "simulate",
            "size-vs-density",
            "--reps",
            "5",
            "--seed",
            "9",
            "--output",
            path_str(&csv),
            "--json",
            path_str(&json),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((std::fs::read(&csv).unwrap(), std::fs::read(&json).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let v: Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["results"][0]["records"].as_array().unwrap().len(), 10);
}

#[test]
fn simulate_weight_comparison_is_paired() {
    let out = run(&["simulate", "weight-comparison", "--m", "7", "--reps", "10", "--confidence", "0.5,0.9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("uniform_mean_width") && header.contains("optimal_mean_width"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn simulate_rejects_unknown_experiment_and_bad_config() {
    assert_eq!(code(&run(&["simulate", "bogus"])), 1);
    assert_eq!(code(&run(&["simulate", "weight-comparison", "--m", "3"])), 1);
    assert_eq!(code(&run(&["simulate", "coverage", "--d", "1.5"])), 1);
    assert_eq!(code(&run(&["simulate", "kary-coverage", "--arity", "7"])), 1);
}

#[test]
fn simulate_fast_caps_replications() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("k.json");
    let o = run(&[
        "simulate",
        "kary-coverage",
        "--n",
        "200",
        "--reps",
        "1000",
        "--fast",
        "--confidence",
        "0.8",
        "--json",
        path_str(&json),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["replications"], 100);
}

/// Worker `spam` answers the opposite of everyone else.
fn contrarian_fixture() -> String {
    let mut rows = Vec::new();
    for t in 0..40 {
        let truth = 1 + (t % 2) as u16;
        for w in ["a", "b", "c", "d"] {
            rows.push((format!("t{t}"), w.to_owned(), truth));
        }
        rows.push((format!("t{t}"), "spam".to_owned(), 3 - truth));
    }
    csv_from(rows)
}

#[test]
fn prune_removes_contrarian() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.csv", &contrarian_fixture());
    let output = dir.path().join("out.csv");
    let o = run(&["prune", "--input", path_str(&input), "--output", path_str(&output)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let removed = json_of(&o);
    assert_eq!(removed.as_array().unwrap().len(), 1);
    assert_eq!(removed[0]["worker"], "spam");
    assert_eq!(removed[0]["approx_error_rate"], 1.0);
    let ds = load_responses(std::fs::File::open(&output).unwrap(), Format::Csv).unwrap();
    assert_eq!(ds.workers(), ["a", "b", "c", "d"]);
}

#[test]
fn prune_threshold_one_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = gen_binary_responses(&[0.1, 0.3, 0.5, 0.2], 50, Density::Uniform(0.7), 4);
    let mut buf = Vec::new();
    write_responses_csv(&ds, &mut buf).unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, &buf).unwrap();
    let output = dir.path().join("out.csv");
    let o = run(&["prune", "--input", path_str(&input), "--output", path_str(&output), "--threshold", "1.0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&output).unwrap(), buf);
    assert_eq!(json_of(&o), Value::Array(vec![]));
}

#[test]
fn prune_sparse_removal_sorted_descending() {
    let dir = tempfile::tempdir().unwrap();
    let rates = [0.05, 0.05, 0.1, 0.1, 0.1, 0.55, 0.6, 0.7];
    let (ds, _) = gen_binary_responses(&rates, 400, Density::Uniform(0.8), 12);
    let mut buf = Vec::new();
    write_responses_csv(&ds, &mut buf).unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, &buf).unwrap();
    let output = dir.path().join("out.csv");
    let removed = dir.path().join("removed.json");
    let o = run(&[
        "prune",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
        "--removed",
        path_str(&removed),
    ]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&removed).unwrap()).unwrap();
    let rates: Vec<f64> = v.as_array().unwrap().iter().map(|r| r["approx_error_rate"].as_f64().unwrap()).collect();
    assert!(!rates.is_empty());
    assert!(rates.windows(2).all(|w| w[0] >= w[1]), "{rates:?}");
}

#[test]
fn prune_rejects_non_binary() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "k3.csv", "task_id,worker_id,response\nt1,a,1\nt1,b,3\nt2,a,2\n");
    let output = dir.path().join("out.csv");
    let o = run(&["prune", "--input", path_str(&input), "--output", path_str(&output)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--map"));
    assert!(!output.exists());
}

#[test]
fn thread_cap_does_not_change_results() {
    let args = ["simulate", "coverage", "--reps", "8", "--seed", "3", "--confidence", "0.5"];
    let a = bin().args(args).env("CROWDGAUGE_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("CROWDGAUGE_THREADS", "4").output().unwrap();
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}
