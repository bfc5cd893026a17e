//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! cargo test --test acceptance            # all criteria
//! cargo test --test acceptance -- 4 6     # a subset by number

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use cryptostock::archdsl::ModelName;
use cryptostock::classical::ClassifierKind;
use cryptostock::dataset::{full_weeks, normalize, segment, Channels, Granularity};
use cryptostock::features::FeatureSetting;
use cryptostock::harness::{metrics, run_control, run_experiment, run_robustness, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::ingest::{fill_missing, session_filter, AssetClass, Bar, Ohlc, OhlcvSeries, TradingCalendar};
use cryptostock::train::{loss, LossKind, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(limit: Duration, t: Instant, v: Verdict) -> Verdict {
    let el = t.elapsed();
    let ok = el <= limit;
    verdict(v.pass && ok, format!("{}; {:.1}s of {}s", v.detail, el.as_secs_f64(), limit.as_secs()))
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let reports: Vec<_> = common::primitive_reports().into_iter().chain(common::model_reports()).collect();
    let worst = reports.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel)).expect("reports");
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let nine = ModelName::ALL.iter().all(|m| reports.iter().any(|r| r.name == format!("model {m}")));
    within(
        Duration::from_secs(120),
        t,
        verdict(
            worst.max_rel < 1e-3 && nine,
            format!("{} cases, {checked} entries, worst {} at {:.2e} (< 1e-3)", reports.len(), worst.name, worst.max_rel),
        ),
    )
}

fn conv() -> Verdict {
    let r = common::conv_report(1000, 2024);
    verdict(
        r.configs == 1000 && r.length_failures == 0 && r.max_abs < 1e-5,
        format!("{} configs, {} length mismatches, max |diff| {:.2e} (< 1e-5)", r.configs, r.length_failures, r.max_abs),
    )
}

fn pipeline() -> Verdict {
    let cal = TradingCalendar::nyse_2023_2024();
    let start = Utc.from_utc_datetime(&NaiveDate::from_ymd_opt(2023, 6, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()).timestamp() / 60;
    let end = Utc.from_utc_datetime(&NaiveDate::from_ymd_opt(2024, 6, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()).timestamp() / 60;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut problems = Vec::new();
    let (mut daily, mut weekly, mut normalized) = (0, 0, 0);
    for i in 0..10 {
        let class = if i < 3 { AssetClass::Crypto } else { AssetClass::Stock };
        // Crypto trades around the clock; stock bars have random gaps.
        let mut p = 100.0;
        let bars: Vec<Bar> = (start..end)
            .filter_map(|m| {
                if class == AssetClass::Stock && rng.random::<f64>() < 0.1 {
                    return None;
                }
                p *= 1.0 + rng.random_range(-1e-3..1e-3);
                let q = p * (1.0 + rng.random_range(0.0..1e-3));
                Some(Bar { minute: m, ohlc: Some(Ohlc { open: p, high: q, low: p * 0.999, close: p }) })
            })
            .collect();
        let raw = OhlcvSeries::new(format!("A{i}"), class, bars).expect("valid bars");
        let aligned = fill_missing(&session_filter(&raw, &cal)).expect("every day has bars");
        if aligned.len() != 98_532 {
            problems.push(format!("A{i}: {} rows", aligned.len()));
        }
        let d = segment(&aligned, Granularity::Daily, Channels::AllFour);
        daily += d.len();
        let w = segment(&aligned, Granularity::Weekly, Channels::CloseOnly);
        weekly += w.len();
        if w.iter().any(|s| s.length != 5 * 391) {
            problems.push(format!("A{i}: weekly length"));
        }
        for m in full_weeks(&aligned.days) {
            let span = aligned.days[m + 4] - aligned.days[m];
            if span.num_days() != 4 {
                problems.push(format!("A{i}: week at {} spans {span}", aligned.days[m]));
            }
        }
        for s in d.iter().chain(&w) {
            let z = normalize(s);
            for c in 0..z.channels {
                let ch = z.channel(c);
                let n = ch.len() as f64;
                let mean = ch.iter().sum::<f64>() / n;
                let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if !(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4) {
                    problems.push(format!("A{i}: normalized mean {mean:.2e} var {var}"));
                }
            }
            normalized += 1;
        }
    }
    // 42 full Monday-Friday weeks in the calendar year.
    let ok = problems.is_empty() && daily == 252 * 10 && weekly == 42 * 10;
    verdict(
        ok,
        format!(
            "10 assets x 98,532 rows, {daily} daily (252 x 10), {weekly} weekly, {normalized} normalized samples{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems[..problems.len().min(3)].join(", ")) }
        ),
    )
}

fn separable_spec() -> SyntheticSpec {
    // 2 assets x 100 days per class: 200 daily samples per class.
    SyntheticSpec { crypto_assets: 2, stock_assets: 2, days: 100, crypto_phi: 0.99, stock_phi: 0.6, seed: 0, ..SyntheticSpec::default() }
}

fn scaled(track: Track, spec: &SyntheticSpec, epochs: usize, patience: usize) -> ExperimentConfig {
    ExperimentConfig {
        track,
        repeats: 1,
        width_divisor: 4,
        train: TrainConfig { epochs, patience: Some(patience), ..TrainConfig::default() },
        data: DataSource::Synthetic(spec.clone()),
        ..ExperimentConfig::default()
    }
}

fn neural(model: ModelName) -> Track {
    Track::Neural { model, arch: None }
}

fn separability() -> Verdict {
    let t = Instant::now();
    let spec = separable_spec();
    let pool = spec.generate().expect("synthetic data");
    let mut parts = Vec::new();
    let mut ok = true;
    let tracks = [
        ("CNN", neural(ModelName::Cnn)),
        ("GRU", neural(ModelName::Gru)),
        ("Autoencoder", neural(ModelName::Autoencoder)),
        ("RF", Track::Classical { classifier: ClassifierKind::RF, features: FeatureSetting::PR }),
    ];
    for (name, track) in tracks {
        // Default 500 epochs at a quarter.
        let out = run_experiment(&scaled(track, &spec, 125, 20), &pool).expect("experiment runs");
        let acc = out.report.mean_accuracy();
        ok &= acc >= 0.90;
        parts.push(format!("{name} {acc:.3}"));
    }
    within(Duration::from_secs(15 * 60), t, verdict(ok, format!("test accuracy {} (>= 0.90)", parts.join(", "))))
}

fn control() -> Verdict {
    let t = Instant::now();
    // Eight exchangeable assets, 800 daily samples, 30% held out.
    let spec = SyntheticSpec::exchangeable(AssetClass::Crypto, 8, 100, 0.9, 7);
    let pool = spec.generate().expect("synthetic data");
    let mut parts = Vec::new();
    let mut ok = true;
    for model in [ModelName::Mlp, ModelName::Cnn, ModelName::Lstm] {
        let cfg = ExperimentConfig { repeats: 5, test_fraction: 0.3, ..scaled(neural(model), &spec, 40, 8) };
        let out = run_control(&cfg, &pool, AssetClass::Crypto).expect("control runs");
        let s = &out.report.summary;
        ok &= (0.45..=0.55).contains(&s.accuracy.mean);
        parts.push(format!("{model} {:.3} (train {:.3})", s.accuracy.mean, s.train_accuracy.mean));
    }
    within(
        Duration::from_secs(10 * 60),
        t,
        verdict(ok, format!("mean test accuracy over 5 repeats {} (in [0.45, 0.55])", parts.join(", "))),
    )
}

fn robustness() -> Verdict {
    let spec = separable_spec();
    let pool = spec.generate().expect("synthetic data");
    let mut parts = Vec::new();
    let mut ok = true;
    let rows: [(ModelName, [&str; 2]); 2] =
        [(ModelName::Cnn, ["32-32-64", "32-32-64-64-128-128"]), (ModelName::ResNet, ["32-32-32-32", "32-32-32-64-64-64-128-128-128"])];
    for (model, variants) in rows {
        let variants: Vec<String> = variants.iter().map(|s| s.to_string()).collect();
        let arms = run_robustness(&scaled(neural(model), &spec, 60, 10), &pool, &variants).expect("sweep runs");
        let base = arms[0].1.report.mean_accuracy();
        let accs: Vec<f64> = arms.iter().map(|(_, o)| o.report.mean_accuracy()).collect();
        ok &= accs.iter().all(|a| (a - base).abs() <= 0.03);
        let shown: Vec<String> = arms.iter().zip(&accs).map(|((n, _), a)| format!("{n} {a:.3}")).collect();
        parts.push(format!("{model}: {}", shown.join(" / ")));
    }
    verdict(ok, format!("{} (within 0.03 of baseline)", parts.join("; ")))
}

fn feature_oracle() -> Verdict {
    let r = common::feature_report(1000, 17);
    verdict(
        r.series == 1000 && r.max_err < 1e-9 && r.invariance_failures.is_empty(),
        format!(
            "{} series, worst {} at {:.2e} (< 1e-9), {} invariance failures",
            r.series,
            r.worst_field,
            r.max_err,
            r.invariance_failures.len()
        ),
    )
}

fn metrics_hand() -> Verdict {
    let pred = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
    let label = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
    let m = metrics(&pred, &label).expect("equal lengths");
    let counts = (m.tp, m.fp, m.fn_, m.tn) == (2, 1, 1, 6);
    let all = metrics(&[1, 0], &[1, 0]).expect("equal lengths");
    let none = metrics(&[0, 0], &[0, 0]).expect("equal lengths");
    let ok =
        counts && m.f1 == 2.0 / 3.0 && m.accuracy == 0.8 && (all.accuracy, all.f1) == (1.0, 1.0) && (none.accuracy, none.f1) == (1.0, 0.0);
    verdict(ok, format!("TP=2 FP=1 FN=1 TN=6 -> F1 {} acc {}, plus all-correct and no-positive cases", m.f1, m.accuracy))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let run = |out: &std::path::Path, args: &[&str]| {
        let mut argv = vec!["cryptostock", "--out-dir", out.to_str().unwrap()];
        argv.extend_from_slice(args);
        cryptostock::cli::dispatch(argv)
    };
    let mut parts = Vec::new();
    let mut ok = true;
    let cases: [&[&str]; 2] = [
        &["experiment", "--model", "CNN", "--width-divisor", "8", "--epochs", "4", "--repeats", "2", "--synthetic-days", "15"],
        &["experiment", "--classifier", "GB", "--features", "P+R", "--repeats", "2", "--synthetic-days", "15"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        let manifest = a.join("manifest.json");
        let codes = (run(&a, args), run(&b, &["--config", manifest.to_str().unwrap(), "experiment"]));
        let (x, y) = (std::fs::read(a.join("metrics.jsonl")), std::fs::read(b.join("metrics.jsonl")));
        let same = codes == (0, 0) && matches!((&x, &y), (Ok(x), Ok(y)) if x == y && !x.is_empty());
        ok &= same;
        parts.push(format!("{} {}", args[1..3].join(" "), if same { "identical" } else { "differs" }));
    }
    verdict(ok, format!("re-run from manifest: {}", parts.join(", ")))
}

fn focal_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let focal = LossKind::Focal { alpha: 0.5, gamma: 0.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let p = rng.random_range(1e-6..1.0 - 1e-6);
        let y = if rng.random::<bool>() { 1.0 } else { 0.0 };
        worst = worst.max((loss(focal, p, y) - 0.5 * loss(LossKind::Bce, p, y)).abs());
    }
    verdict(worst < 1e-9, format!("100,000 draws, max |focal - 0.5 bce| {worst:.2e} (< 1e-9)"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient correctness", gradients),
        ("conv arithmetic", conv),
        ("pipeline arithmetic", pipeline),
        ("separability", separability),
        ("random-label control", control),
        ("architecture robustness", robustness),
        ("feature oracle", feature_oracle),
        ("metrics", metrics_hand),
        ("determinism", determinism),
        ("focal identity", focal_identity),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += !v.pass as usize;
        println!("[{}] {n:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
