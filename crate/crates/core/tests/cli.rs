use std::fs;
use std::path::Path;

use cryptostock::cli::dispatch;
use cryptostock::harness::SyntheticSpec;
use cryptostock::ingest::{write_csv, TradingCalendar};

fn run(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["cryptostock", "--out-dir", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    dispatch(argv)
}

const RF: &[&str] = &["experiment", "--classifier", "RF", "--features", "NP+NR", "--repeats", "2", "--synthetic-days", "15"];

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["bogus"]), 1);
    assert_eq!(run(dir.path(), &["experiment", "--no-such-flag"]), 1);
    assert_eq!(run(dir.path(), &["experiment", "--model", "CNN", "--classifier", "RF"]), 1);
    assert_eq!(run(dir.path(), &["ingest"]), 1);
    assert_eq!(run(dir.path(), &["--help"]), 0);
}

#[test]
fn data_and_numeric_errors() {
    let dir = tempfile::tempdir().unwrap();
    let weekly_returns = ["experiment", "--granularity", "weekly", "--representation", "return"];
    assert_eq!(run(dir.path(), &weekly_returns), 2);
    assert_eq!(run(dir.path(), &["control", "--class", "crypto", "--classifier", "RF"]), 2);
    let diverge = ["experiment", "--model", "MLP", "--learning-rate", "1e30", "--epochs", "3", "--repeats", "1", "--synthetic-days", "15"];
    assert_eq!(run(dir.path(), &diverge), 3);
}

#[test]
fn experiment_writes_metrics_and_manifest_and_reruns_identically() {
    let a = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), RF), 0);
    let metrics = fs::read_to_string(a.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["config"]["track"]["features"], "NP+NR");

    let b = tempfile::tempdir().unwrap();
    let m = a.path().join("manifest.json");
    assert_eq!(run(b.path(), &["--config", m.to_str().unwrap(), "experiment"]), 0);
    assert_eq!(fs::read(a.path().join("metrics.jsonl")).unwrap(), fs::read(b.path().join("metrics.jsonl")).unwrap());

    // Results append.
    assert_eq!(run(a.path(), RF), 0);
    assert_eq!(fs::read_to_string(a.path().join("metrics.jsonl")).unwrap().lines().count(), 6);
    assert_eq!(run(a.path(), &["report"]), 0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "repeats = 4\nseed = 11\n[track]\nkind = \"classical\"\nclassifier = \"KNN\"\nfeatures = \"P\"\n[data]\nsource = \"synthetic\"\ndays = 12\n",
    )
    .unwrap();
    assert_eq!(run(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "5", "experiment", "--repeats", "1"]), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let c = &manifest["config"];
    assert_eq!(c["repeats"], 1);
    assert_eq!(c["seed"], 5);
    assert_eq!(c["data"]["seed"], 5);
    assert_eq!(c["data"]["days"], 12);
    assert_eq!(c["track"]["classifier"], "KNN");
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["train", "--model", "MLP", "--epochs", "3", "--synthetic-days", "15", "--width-divisor", "4"];
    assert_eq!(run(dir.path(), &args), 0);
    let ck = dir.path().join("checkpoints/daily-close-balanced-price-MLP");
    let model = cryptostock::archdsl::load_checkpoint(&ck).unwrap();
    assert_eq!(model.input_shape().length, 391);
    let hist = fs::read_to_string(dir.path().join("history/daily-close-balanced-price-MLP.csv")).unwrap();
    assert_eq!(hist.lines().count(), 4);
}

#[test]
fn control_robustness_cdf_features_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let common = ["--synthetic-days", "10", "--synthetic-assets", "4"];
    let with = |head: &[&'static str]| -> Vec<&'static str> { head.iter().chain(common.iter()).copied().collect() };
    assert_eq!(run(p, &with(&["control", "--class", "stock", "--model", "MLP", "--repeats", "2", "--epochs", "2"])), 0);
    let robust = ["robustness", "--model", "CNN", "--variant", "32-32-64", "--repeats", "1", "--epochs", "1", "--width-divisor", "8"];
    assert_eq!(run(p, &with(&robust)), 0);
    let lines = fs::read_to_string(p.join("metrics.jsonl")).unwrap();
    // control: 2 repeats + summary; robustness: 2 arms x (1 repeat + summary)
    assert_eq!(lines.lines().count(), 3 + 4);
    assert_eq!(run(p, &with(&["cdf", "--feature", "variance"])), 0);
    let cdf = fs::read_to_string(p.join("cdf/variance.csv")).unwrap();
    assert!(cdf.starts_with("class,value,cdf\ncrypto,"));
    assert_eq!(cdf.lines().count(), 1 + 8 * 10);
    assert_eq!(run(p, &with(&["features", "--classifier", "GB", "--features", "R"])), 0);
    assert!(p.join("features/R-test.csv").exists());
    assert_eq!(run(p, &with(&["dataset"])), 0);
    assert!(p.join("dataset/samples.csv").exists() && p.join("dataset/values.bin").exists());
}

#[test]
fn ingest_aligns_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cal = TradingCalendar::nyse_2023_2024();
    let spec = SyntheticSpec { crypto_assets: 1, stock_assets: 0, days: 2, ..SyntheticSpec::default() };
    let series = &spec.generate().unwrap()[0];
    let src = dir.path().join("btc.csv");
    write_csv(&series.to_ohlcv(&cal).unwrap(), &src).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&out, &["ingest", "--csv", src.to_str().unwrap(), "--class", "crypto", "--asset", "BTC"]), 0);
    let text = fs::read_to_string(out.join("aligned/crypto/BTC.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 391);
    assert_eq!(fs::read_to_string(src).unwrap().lines().nth(1), text.lines().nth(1));
}
