//! Command-line front end. Settings resolve in three layers: built-in
//! defaults, then `--config` (TOML, or the `manifest.json` of an earlier
//! run), then flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::archdsl::{save_checkpoint, ModelName};
use crate::classical::ClassifierKind;
use crate::dataset::{Channels, Granularity};
use crate::features::{FeatureMatrix, FeatureSetting};
use crate::harness::{
    build_samples, feature_by_class, run_control, run_experiment, run_once, run_robustness, save_cdf, split_samples, Balance, DataSource,
    ExperimentConfig, ExperimentOutcome, MetricsReport, Representation, Track,
};
use crate::ingest::{fill_missing, load_csv, session_filter, write_csv, AssetClass, KlinesClient, TradingCalendar};
use crate::train::LossKind;
use crate::{Error, Result};

const DEFAULT_ENDPOINT: &str = "https://api.binance.com/api/v3/klines";

#[derive(Parser, Debug)]
#[command(name = "cryptostock", version, about = "Crypto vs. stock minute-series classification toolkit")]
struct Cli {
    /// Master seed; replaces the config seed and the synthetic data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment config, or a manifest.json written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch klines or load a CSV, then session-align and gap-fill it.
    Ingest(IngestArgs),
    /// Segment, split and save a dataset.
    Dataset(ExpArgs),
    /// Train one neural model and save its checkpoint and history.
    Train(ExpArgs),
    /// Extract feature matrices for every split.
    Features(ExpArgs),
    /// Run an experiment over seeded repeats.
    Experiment(ExpArgs),
    /// Random-label control within one asset class.
    Control(ControlArgs),
    /// Baseline against alternative architectures on one split.
    Robustness(RobustnessArgs),
    /// Per-class empirical CDF of one feature.
    Cdf(CdfArgs),
    /// Summarize metrics.jsonl.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Local CSV with timestamp,open,high,low,close columns.
    #[arg(long, conflicts_with = "symbol")]
    csv: Option<PathBuf>,
    /// Symbol to fetch from the klines endpoint.
    #[arg(long)]
    symbol: Option<String>,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = "1m")]
    interval: String,
    /// First UTC day to fetch (YYYY-MM-DD).
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Last UTC day to fetch, inclusive.
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Asset id; defaults to the symbol or file stem.
    #[arg(long)]
    asset: Option<String>,
    #[arg(long, default_value = "crypto")]
    class: AssetClass,
    /// Calendar file; the bundled NYSE year if absent.
    #[arg(long)]
    calendar: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
struct ExpArgs {
    /// daily or weekly.
    #[arg(long)]
    granularity: Option<Granularity>,
    /// close or ohlc.
    #[arg(long)]
    channels: Option<Channels>,
    /// balanced or unbalanced.
    #[arg(long)]
    balance: Option<Balance>,
    /// price or return.
    #[arg(long)]
    representation: Option<Representation>,
    /// Neural model (MLP, CNN, ResNet, RNN, GRU, LSTM, Autoencoder, TimeCNN, MCNN).
    #[arg(long, conflicts_with = "classifier")]
    model: Option<ModelName>,
    /// Architecture override: notation or a width list such as 32-32-64.
    #[arg(long)]
    arch: Option<String>,
    /// Classical model (LR, RF, SVM, KNN, GB).
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    /// Feature setting for classical models (P, R, NP, NR, P+R, NP+NR).
    #[arg(long)]
    features: Option<FeatureSetting>,
    /// Repeats with seeds seed, seed+1, ...
    #[arg(long)]
    repeats: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Dropout rate ahead of the output layer.
    #[arg(long)]
    dropout: Option<f64>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// bce, mse or focal.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Divide every layer width by this.
    #[arg(long)]
    width_divisor: Option<usize>,
    /// Directory with crypto/*.csv and stock/*.csv; synthetic data if absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Calendar file for --data-dir; the bundled NYSE year if absent.
    #[arg(long, requires = "data_dir")]
    calendar: Option<PathBuf>,
    /// Trading days per synthetic asset.
    #[arg(long, conflicts_with = "data_dir")]
    synthetic_days: Option<usize>,
    /// Synthetic assets per class.
    #[arg(long, conflicts_with = "data_dir")]
    synthetic_assets: Option<usize>,
}

#[derive(Args, Debug)]
struct ControlArgs {
    /// crypto or stock.
    #[arg(long)]
    class: AssetClass,
    #[command(flatten)]
    exp: ExpArgs,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    /// Alternative architecture; repeat the flag for several.
    #[arg(long = "variant", required = true)]
    variants: Vec<String>,
    #[command(flatten)]
    exp: ExpArgs,
}

#[derive(Args, Debug)]
struct CdfArgs {
    /// Feature column, e.g. mean, variance, n_max_peaks or r_mean.
    #[arg(long)]
    feature: String,
    #[arg(long, default_value = "P")]
    setting: FeatureSetting,
    #[command(flatten)]
    exp: ExpArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics file; `<out-dir>/metrics.jsonl` if absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs one invocation and returns the process exit code: 0 success,
/// 1 usage error, 2 data error, 3 diverged training.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    seeds: Vec<u64>,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(p) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    if p.extension().is_some_and(|x| x == "json") {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let cfg = v.get("config").cloned().unwrap_or(v);
        return Ok(serde_json::from_value(cfg)?);
    }
    ExperimentConfig::from_toml(&text)
}

fn resolve(cli_seed: Option<u64>, base: ExperimentConfig, a: &ExpArgs) -> CliResult<ExperimentConfig> {
    let mut c = base;
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag.clone() {
                c.$($field)+ = v;
            }
        };
    }
    set!(a.granularity => granularity);
    set!(a.channels => channels);
    set!(a.balance => balance);
    set!(a.representation => representation);
    set!(a.repeats => repeats);
    set!(a.epochs => train.epochs);
    set!(a.learning_rate => train.learning_rate);
    set!(a.batch_size => train.batch_size);
    set!(a.dropout => train.dropout);
    set!(a.width_divisor => width_divisor);
    if a.patience.is_some() {
        c.train.patience = a.patience;
    }
    if a.loss.is_some() {
        c.loss = a.loss;
    }
    if let Some(model) = a.model {
        c.track = Track::Neural { model, arch: a.arch.clone() };
    } else if let Some(classifier) = a.classifier {
        let features = match (&c.track, a.features) {
            (_, Some(f)) => f,
            (Track::Classical { features, .. }, None) => *features,
            _ => FeatureSetting::PR,
        };
        c.track = Track::Classical { classifier, features };
    } else {
        match (&mut c.track, &a.arch, a.features) {
            (Track::Neural { arch, .. }, Some(x), _) => *arch = Some(x.clone()),
            (Track::Classical { features, .. }, _, Some(f)) => *features = f,
            (_, None, None) => {}
            _ => return Err(Failure::Usage("--arch applies to neural models, --features to classical ones".into())),
        }
    }
    if let Some(dir) = &a.data_dir {
        c.data = DataSource::Csv { dir: dir.clone(), calendar: a.calendar.clone() };
    }
    if a.synthetic_days.is_some() || a.synthetic_assets.is_some() {
        let DataSource::Synthetic(spec) = &mut c.data else {
            return Err(Failure::Usage("--synthetic-days/--synthetic-assets need synthetic data".into()));
        };
        if let Some(days) = a.synthetic_days {
            spec.days = days;
        }
        if let Some(n) = a.synthetic_assets {
            spec.crypto_assets = n;
            spec.stock_assets = n;
        }
    }
    if let Some(seed) = cli_seed {
        c.seed = seed;
        if let DataSource::Synthetic(spec) = &mut c.data {
            spec.seed = seed;
        }
    }
    c.validate()?;
    Ok(c)
}

struct Out {
    dir: PathBuf,
    argv: Vec<String>,
}

impl Out {
    fn new(dir: &Path, argv: Vec<String>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Out { dir: dir.to_path_buf(), argv })
    }

    fn sub(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn append_metrics(&self, report: &MetricsReport) -> Result<()> {
        let p = self.dir.join("metrics.jsonl");
        let f = fs::OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = std::io::BufWriter::new(f);
        report.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(&p, e))
    }

    fn histories(&self, label: &str, outcome: &ExperimentOutcome) -> Result<()> {
        if outcome.histories.is_empty() {
            return Ok(());
        }
        let dir = self.sub("history")?;
        for (i, h) in outcome.histories.iter().enumerate() {
            h.save_csv(&dir.join(format!("{}-r{i}.csv", file_safe(label))))?;
        }
        Ok(())
    }

    fn manifest(&self, command: &str, config: &ExperimentConfig, extra: Option<serde_json::Value>) -> Result<()> {
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: self.argv.clone(),
            seeds: (0..config.repeats as u64).map(|i| config.seed.wrapping_add(i)).collect(),
            config,
            extra,
        };
        let p = self.dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let out = Out::new(&cli.out_dir, argv)?;
    let base = || base_config(cli.config.as_deref());
    match &cli.command {
        Command::Ingest(a) => ingest(&out, a),
        Command::Dataset(a) => {
            let cfg = resolve(cli.seed, base()?, a)?;
            let data = split_samples(&cfg, build_samples(&cfg, &cfg.data.load()?)?, cfg.seed)?;
            data.save(&out.sub("dataset")?)?;
            out.manifest("dataset", &cfg, None)?;
            println!("{} samples written to {}", data.samples.len(), out.dir.join("dataset").display());
            Ok(())
        }
        Command::Train(a) => {
            let cfg = resolve(cli.seed, base()?, a)?;
            if !matches!(cfg.track, Track::Neural { .. }) {
                return Err(Failure::Usage("train needs a neural --model".into()));
            }
            let data = split_samples(&cfg, build_samples(&cfg, &cfg.data.load()?)?, cfg.seed)?;
            let run = run_once(&cfg, &data, None, 0, cfg.seed)?;
            let label = cfg.label();
            let ck = out.sub("checkpoints")?.join(file_safe(&label));
            save_checkpoint(run.model.as_ref().expect("neural run"), &ck)?;
            if let Some(h) = &run.history {
                h.save_csv(&out.sub("history")?.join(format!("{}.csv", file_safe(&label))))?;
            }
            let report = MetricsReport::from_repeats(label, vec![run.record]);
            out.append_metrics(&report)?;
            out.manifest("train", &ExperimentConfig { repeats: 1, ..cfg }, None)?;
            print_summary(&report);
            Ok(())
        }
        Command::Features(a) => {
            let cfg = resolve(cli.seed, base()?, a)?;
            let setting = match cfg.track {
                Track::Classical { features, .. } => features,
                Track::Neural { .. } => a.features.unwrap_or(FeatureSetting::PR),
            };
            let data = split_samples(&cfg, build_samples(&cfg, &cfg.data.load()?)?, cfg.seed)?;
            let dir = out.sub("features")?;
            for split in [crate::dataset::Split::Train, crate::dataset::Split::Val, crate::dataset::Split::Test] {
                let rows: Vec<_> = data.indices(split).into_iter().map(|i| &data.samples[i]).collect();
                let name = format!("{}-{}.csv", file_safe(&setting.to_string()), format!("{split:?}").to_lowercase());
                FeatureMatrix::build(setting, &rows)?.save_csv(&dir.join(name))?;
            }
            out.manifest("features", &cfg, None)?;
            Ok(())
        }
        Command::Experiment(a) => {
            let cfg = resolve(cli.seed, base()?, a)?;
            let outcome = run_experiment(&cfg, &cfg.data.load()?)?;
            finish(&out, "experiment", &cfg, &outcome, None)
        }
        Command::Control(a) => {
            let cfg = resolve(cli.seed, base()?, &a.exp)?;
            let outcome = run_control(&cfg, &cfg.data.load()?, a.class)?;
            let extra = serde_json::json!({ "class": a.class });
            finish(&out, "control", &cfg, &outcome, Some(extra))
        }
        Command::Robustness(a) => {
            let cfg = resolve(cli.seed, base()?, &a.exp)?;
            let arms = run_robustness(&cfg, &cfg.data.load()?, &a.variants)?;
            for (_, outcome) in &arms {
                out.append_metrics(&outcome.report)?;
                out.histories(&outcome.report.summary.experiment, outcome)?;
                print_summary(&outcome.report);
            }
            out.manifest("robustness", &cfg, Some(serde_json::json!({ "variants": a.variants })))?;
            Ok(())
        }
        Command::Cdf(a) => {
            let cfg = resolve(cli.seed, base()?, &a.exp)?;
            let samples = build_samples(&cfg, &cfg.data.load()?)?;
            let traces = feature_by_class(&samples, a.setting, &a.feature)?;
            let path = out.sub("cdf")?.join(format!("{}.csv", file_safe(&a.feature)));
            save_cdf(&traces, &path)?;
            let extra = serde_json::json!({ "feature": a.feature, "setting": a.setting });
            out.manifest("cdf", &cfg, Some(extra))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Report(a) => report(&a.input.clone().unwrap_or_else(|| out.dir.join("metrics.jsonl"))),
    }
}

fn finish(
    out: &Out,
    command: &str,
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    extra: Option<serde_json::Value>,
) -> CliResult<()> {
    out.append_metrics(&outcome.report)?;
    out.histories(&outcome.report.summary.experiment, outcome)?;
    out.manifest(command, cfg, extra)?;
    print_summary(&outcome.report);
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    let s = &r.summary;
    println!(
        "{}: acc {:.4} (sd {:.4})  f1 {:.4} (sd {:.4})  train acc {:.4}  repeats {}",
        s.experiment, s.accuracy.mean, s.accuracy.std, s.f1.mean, s.f1.std, s.train_accuracy.mean, s.repeats
    );
}

fn report(path: &Path) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    println!("{:<60} {:>7} {:>8} {:>8} {:>8} {:>9}", "experiment", "repeats", "acc", "acc_sd", "f1", "train_acc");
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(Error::from)?;
        if v["record"] != "summary" {
            continue;
        }
        let f = |k: &str| v[k]["mean"].as_f64().unwrap_or(f64::NAN);
        println!(
            "{:<60} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            v["experiment"].as_str().unwrap_or("?"),
            v["repeats"],
            f("accuracy"),
            v["accuracy"]["std"].as_f64().unwrap_or(f64::NAN),
            f("f1"),
            f("train_accuracy")
        );
    }
    Ok(())
}

fn ingest(out: &Out, a: &IngestArgs) -> CliResult<()> {
    let cal = match &a.calendar {
        Some(p) => TradingCalendar::load(p)?,
        None => TradingCalendar::nyse_2023_2024(),
    };
    let raw = match (&a.csv, &a.symbol) {
        (Some(path), None) => {
            let id = a.asset.clone().unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            load_csv(path, &id, a.class)?
        }
        (None, Some(symbol)) => {
            let (Some(start), Some(end)) = (a.start, a.end) else {
                return Err(Failure::Usage("--symbol needs --start and --end".into()));
            };
            let ms = |d: NaiveDate| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis();
            let client = KlinesClient::new(a.endpoint.clone());
            let mut s = client.fetch(symbol, &a.interval, ms(start), ms(end + chrono::Duration::days(1)) - 1)?;
            s.asset_class = a.class;
            if let Some(id) = &a.asset {
                s.asset_id = id.clone();
            }
            let p = out.sub("raw")?.join(format!("{}.csv", file_safe(&s.asset_id)));
            write_csv(&s, &p)?;
            s
        }
        _ => return Err(Failure::Usage("give exactly one of --csv or --symbol".into())),
    };
    let aligned = fill_missing(&session_filter(&raw, &cal))?;
    let class_dir = match a.class {
        AssetClass::Crypto => "aligned/crypto",
        AssetClass::Stock => "aligned/stock",
    };
    let p = out.sub(class_dir)?.join(format!("{}.csv", file_safe(&aligned.asset_id)));
    write_csv(&aligned.to_ohlcv(&cal)?, &p)?;
    println!("{} rows over {} trading days -> {}", aligned.len(), aligned.days.len(), p.display());
    Ok(())
}
