use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coupled_tl::data::{load_windows_csv, nmse};

fn ctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctl"))
        .args(args)
        .output()
        .expect("spawn ctl")
}

fn ok(args: &[&str]) -> String {
    let out = ctl(args);
    assert!(
        out.status.success(),
        "ctl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_trace_totals(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn train_writes_model_manifest_and_descending_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&[
        "train", "--n", "128", "--ratio", "0.5", "--seed", "3", "--lambda", "0.1", "--mu", "1",
        "--train-count", "300", "--max-iters", "25", "--out", s(&out),
    ]);
    assert!(out.join("model.ctl").exists());
    let manifest = fs::read_to_string(out.join("model.ctl.manifest")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("m = 64"));
    let totals = read_trace_totals(&out.join("trace.csv"));
    assert_eq!(totals.len(), 26);
    assert!(totals.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
}

#[test]
fn full_ratio_toy_is_reconstructed_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    ok(&[
        "train", "--n", "16", "--ratio", "1.0", "--seed", "2", "--lambda", "1e-6",
        "--train-count", "200", "--test-count", "50", "--noise-std", "0.05", "--out", s(&out),
    ]);
    let model = out.join("model.ctl");
    let eval = dir.path().join("eval");
    let text = ok(&[
        "evaluate", "--model", s(&model), "--method", "coupled", "--train-count", "200",
        "--test-count", "50", "--noise-std", "0.05", "--out", s(&eval),
    ]);
    assert!(text.contains("coupled"));
    let mut r = csv::Reader::from_path(eval.join("eval_errors.csv")).unwrap();
    for rec in r.records() {
        let e: f64 = rec.unwrap()[2].parse().unwrap();
        assert!(e <= 1e-6, "window nmse {e:e}");
    }
}

#[test]
fn missing_training_file_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = ctl(&[
        "train", "--train-csv", s(&dir.path().join("nope.csv")), "--ratio", "0.5", "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&res.stderr).is_empty());
    assert!(!out.join("model.ctl").exists());
    assert!(!out.join("model.ctl.partial").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let res = ctl(&["train", "--ratio", "1.5", "--n", "8", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    let res = ctl(&["evaluate", "--out", s(dir.path()), "--method", "coupled"]);
    assert_eq!(res.status.code(), Some(1));
}

/// Trains a small model and returns (dir, model path).
fn small_model() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    ok(&[
        "train", "--n", "32", "--ratio", "0.5", "--seed", "5", "--train-count", "200",
        "--max-iters", "20", "--data-seed", "11", "--out", s(&out),
    ]);
    let model = out.join("model.ctl");
    (dir, model)
}

#[test]
fn evaluate_reports_both_methods_and_is_reproducible() {
    let (dir, model) = small_model();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let text = ok(&[
            "evaluate", "--model", s(&model), "--train-count", "200", "--test-count", "40",
            "--data-seed", "11", "--out", s(&out),
        ]);
        (text, out)
    };
    let (text, a) = run("e1");
    assert!(text.contains("coupled") && text.contains("cs-baseline"));
    assert!(text.contains("mean, ±std") && text.contains("max") && text.contains("min"));
    let table = fs::read_to_string(a.join("eval_table.csv")).unwrap();
    assert!(table.contains(",coupled,nmse,") && table.contains(",cs-baseline,nmse,"));
    let manifest = fs::read_to_string(a.join("eval.manifest")).unwrap();
    assert!(manifest.contains("coupled_model") && manifest.contains("cs_gamma_factor"));

    let (_, b) = run("e2");
    assert_eq!(table, fs::read_to_string(b.join("eval_table.csv")).unwrap());
}

#[test]
fn conflicting_seed_is_rejected() {
    let (dir, model) = small_model();
    let res = ctl(&[
        "evaluate", "--model", s(&model), "--seed", "6", "--method", "coupled",
        "--out", s(&dir.path().join("e")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let res = ctl(&[
        "evaluate", "--model", s(&model), "--ratio", "0.25", "--method", "coupled",
        "--out", s(&dir.path().join("e")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn reconstruct_matches_evaluate_errors() {
    let (dir, model) = small_model();
    let test_csv = dir.path().join("test.csv");
    ok(&[
        "synth", "--n", "32", "--count", "17", "--seed", "99", "--out", s(&test_csv),
    ]);
    let recon_path = dir.path().join("recon.csv");
    ok(&[
        "reconstruct", "--model", s(&model), "--test-csv", s(&test_csv), "--out", s(&recon_path),
    ]);
    let truth = load_windows_csv(&test_csv).unwrap();
    let recon = load_windows_csv(&recon_path).unwrap();
    assert_eq!(recon.ncols(), 17);
    assert_eq!(recon.nrows(), 32);
    let trace = fs::read_to_string(dir.path().join("recon.csv.trace.csv")).unwrap();
    assert!(trace.starts_with("window,index,truth,reconstruction\n"));
    assert_eq!(trace.lines().count(), 1 + 17 * 32);

    let eval = dir.path().join("eval");
    ok(&[
        "evaluate", "--model", s(&model), "--method", "coupled", "--test-csv", s(&test_csv),
        "--out", s(&eval),
    ]);
    let mut r = csv::Reader::from_path(eval.join("eval_errors.csv")).unwrap();
    for (k, rec) in r.records().enumerate() {
        let expected: f64 = rec.unwrap()[2].parse().unwrap();
        let got = nmse(recon.column(k).as_slice(), truth.column(k).as_slice()).unwrap();
        assert!((got - expected).abs() <= 1e-12, "window {k}: {got} vs {expected}");
    }
}

#[test]
fn benchmark_orders_methods() {
    let (dir, model) = small_model();
    let out = dir.path().join("bench");
    ok(&[
        "benchmark", "--model", s(&model), "--train-count", "200", "--test-count", "20",
        "--data-seed", "11", "--samples", "200", "--out", s(&out),
    ]);
    let mut r = csv::Reader::from_path(out.join("benchmark.csv")).unwrap();
    let rows: Vec<(String, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[2].parse().unwrap())
        })
        .collect();
    let get = |name: &str| rows.iter().find(|(n, _)| n == name).unwrap().1;
    assert!(get("coupled") < get("cs-baseline"));
}
