//! End-to-end experiment runs: dataset construction, training or fitting,
//! test-set scoring and aggregation over seeded repeats.

mod cdf;
mod metrics;
mod synthetic;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cdf::{cdf_points, export_cdf, feature_by_class, save_cdf};
pub use metrics::{metrics, MeanStd, Metrics, MetricsReport, RepeatRecord, Summary};
pub use synthetic::SyntheticSpec;

use crate::archdsl::{InputShape, ModelGraph, ModelName};
use crate::classical::{self, ClassicalParams, ClassifierKind};
use crate::dataset::{balance, segment, stratified_split, to_returns, Channels, Dataset, Granularity, Sample, Split};
use crate::features::{FeatureMatrix, FeatureSetting};
use crate::ingest::{fill_missing, load_csv, session_filter, AlignedSeries, AssetClass, TradingCalendar};
use crate::train::{evaluate, fit, predict, History, LossKind, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    Balanced,
    Unbalanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Price,
    Return,
}

impl std::str::FromStr for Balance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" => Ok(Balance::Balanced),
            "unbalanced" => Ok(Balance::Unbalanced),
            o => Err(Error::InvalidConfig(format!("unknown balance mode `{o}`"))),
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "price" => Ok(Representation::Price),
            "return" | "returns" => Ok(Representation::Return),
            o => Err(Error::InvalidConfig(format!("unknown representation `{o}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Track {
    Neural {
        model: ModelName,
        /// Replacement architecture: full notation or a width list.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arch: Option<String>,
    },
    Classical {
        classifier: ClassifierKind,
        features: FeatureSetting,
    },
}

/// Where the asset series come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// `dir/crypto/*.csv` and `dir/stock/*.csv`, file stem as asset id.
    Csv {
        dir: PathBuf,
        /// Calendar file; the bundled 2023-06 to 2024-05 NYSE year if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calendar: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<AlignedSeries>> {
        match self {
            DataSource::Synthetic(spec) => spec.generate(),
            DataSource::Csv { dir, calendar } => {
                let cal = match calendar {
                    Some(p) => TradingCalendar::load(p)?,
                    None => TradingCalendar::nyse_2023_2024(),
                };
                load_directory(dir, &cal)
            }
        }
    }
}

/// Loads, session-filters and gap-fills every CSV under `dir/crypto` and
/// `dir/stock`, in file-name order.
pub fn load_directory(dir: &Path, cal: &TradingCalendar) -> Result<Vec<AlignedSeries>> {
    let mut out = Vec::new();
    for class in [AssetClass::Crypto, AssetClass::Stock] {
        let sub = dir.join(match class {
            AssetClass::Crypto => "crypto",
            AssetClass::Stock => "stock",
        });
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let series = load_csv(&f, &id, class)?;
            out.push(fill_missing(&session_filter(&series, cal))?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("no csv files under {}/{{crypto,stock}}", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Label written into every record; derived from the settings if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub granularity: Granularity,
    pub channels: Channels,
    pub balance: Balance,
    pub representation: Representation,
    pub track: Track,
    pub repeats: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    /// Neural widths are divided by this.
    pub width_divisor: usize,
    /// Loss for the neural track; MSE for Time-CNN and BCE otherwise if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    /// Training settings; `loss` and `seed` here are replaced per run.
    pub train: TrainConfig,
    pub classical: ClassicalParams,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            granularity: Granularity::Daily,
            channels: Channels::CloseOnly,
            balance: Balance::Balanced,
            representation: Representation::Price,
            track: Track::Neural { model: ModelName::Cnn, arch: None },
            repeats: 5,
            seed: 0,
            test_fraction: 0.2,
            val_fraction: 0.2,
            width_divisor: 1,
            loss: None,
            train: TrainConfig::default(),
            classical: ClassicalParams::default(),
            data: DataSource::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.representation == Representation::Return {
            if self.granularity == Granularity::Weekly {
                return bad("return representation is only defined for daily samples");
            }
            if matches!(self.track, Track::Classical { .. }) {
                return bad("classical track takes raw prices; choose returns through the feature setting");
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return bad("split fractions must lie in [0, 1)");
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be at least 1");
        }
        if let Track::Neural { .. } = self.track {
            if self.val_fraction == 0.0 {
                return bad("the neural track needs a validation split");
            }
        }
        self.train.validate()
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let g = match self.granularity {
            Granularity::Daily => "daily",
            Granularity::Weekly => "weekly",
        };
        let c = match self.channels {
            Channels::CloseOnly => "close",
            Channels::AllFour => "ohlc",
        };
        let b = match self.balance {
            Balance::Balanced => "balanced",
            Balance::Unbalanced => "unbalanced",
        };
        let r = match self.representation {
            Representation::Price => "price",
            Representation::Return => "return",
        };
        let t = match &self.track {
            Track::Neural { model, arch: None } => model.to_string(),
            Track::Neural { model, arch: Some(a) } => format!("{model}[{a}]"),
            Track::Classical { classifier, features } => format!("{classifier}/{features}"),
        };
        format!("{g}-{c}-{b}-{r}-{t}")
    }

    /// Loss the neural track trains `model` with.
    pub fn loss_for(&self, model: ModelName) -> LossKind {
        self.loss.unwrap_or(match model {
            ModelName::TimeCnn => LossKind::Mse,
            _ => LossKind::Bce,
        })
    }

    /// Training settings for one run of `model` with `seed`.
    pub fn train_config(&self, model: ModelName, seed: u64) -> TrainConfig {
        TrainConfig { loss: self.loss_for(model), seed, ..self.train.clone() }
    }

    pub fn build_model(&self, model: ModelName, arch: Option<&str>, shape: InputShape, seed: u64) -> Result<ModelGraph> {
        let mut opts = model.default_options();
        opts.width_divisor = self.width_divisor;
        opts.head_dropout = self.train.dropout > 0.0;
        ModelGraph::build(model, shape, seed, arch, opts)
    }
}

/// Samples of every series under the configured granularity, channels and
/// representation, labelled by asset class.
pub fn build_samples(config: &ExperimentConfig, pool: &[AlignedSeries]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for series in pool {
        for s in segment(series, config.granularity, config.channels) {
            out.push(match config.representation {
                Representation::Price => s,
                Representation::Return => to_returns(&s)?,
            });
        }
    }
    Ok(out)
}

/// Optional balancing followed by the stratified split, both keyed by `seed`.
/// Samples stay un-normalized.
pub fn split_samples(config: &ExperimentConfig, samples: Vec<Sample>, seed: u64) -> Result<Dataset> {
    let samples = match config.balance {
        Balance::Balanced => balance(samples, seed),
        Balance::Unbalanced => samples,
    };
    stratified_split(samples, seed, config.test_fraction, config.val_fraction)
}

/// Result of a run plus the per-repeat training curves (neural track).
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub histories: Vec<History>,
}

/// One trained model with its record.
pub struct TrainedRun {
    pub record: RepeatRecord,
    pub history: Option<History>,
    pub model: Option<ModelGraph>,
    pub fitted: Option<classical::Fitted>,
}

fn hard(p: &[f32]) -> Vec<u8> {
    p.iter().map(|&v| (v >= 0.5) as u8).collect()
}

fn labels(set: &crate::train::TensorSet) -> Vec<u8> {
    set.labels.iter().map(|&y| (y >= 0.5) as u8).collect()
}

/// Trains (or fits) once on an already split dataset and scores the test split.
pub fn run_once(config: &ExperimentConfig, data: &Dataset, arch: Option<&str>, repeat: usize, seed: u64) -> Result<TrainedRun> {
    let n = |s| data.indices(s).len();
    let (n_train, n_val, n_test) = (n(Split::Train), n(Split::Val), n(Split::Test));
    if n_test == 0 {
        return Err(Error::MissingSplit("test"));
    }
    let mut record = RepeatRecord {
        experiment: config.label(),
        repeat,
        seed,
        n_train,
        n_val,
        n_test,
        train_accuracy: f64::NAN,
        val_accuracy: f64::NAN,
        epochs_run: None,
        positive_assets: None,
        test: Metrics::from_counts(0, 0, 0, 0),
    };
    match &config.track {
        Track::Neural { model, arch: base } => {
            let mut ds = data.clone();
            ds.normalize_all();
            let (train, val, test) = (ds.tensors(Split::Train)?, ds.tensors(Split::Val)?, ds.tensors(Split::Test)?);
            let (c, l) = ds.shape().expect("non-empty dataset");
            let arch = arch.or(base.as_deref());
            let mut graph = config.build_model(*model, arch, InputShape::new(l, c), seed)?;
            let tc = config.train_config(*model, seed);
            let history = fit(&mut graph, &train, &val, &tc)?;
            let bs = tc.batch_size;
            record.train_accuracy = evaluate(&graph, &train, tc.loss, bs)?.1;
            record.val_accuracy = evaluate(&graph, &val, tc.loss, bs)?.1;
            record.test = metrics(&hard(&predict(&graph, &test, bs)?), &labels(&test))?;
            record.epochs_run = Some(history.epochs.len());
            Ok(TrainedRun { record, history: Some(history), model: Some(graph), fitted: None })
        }
        Track::Classical { classifier, features } => {
            let matrix = |s: Split| {
                let rows: Vec<&Sample> = data.indices(s).into_iter().map(|i| &data.samples[i]).collect();
                FeatureMatrix::build(*features, &rows)
            };
            let train = matrix(Split::Train)?;
            let fitted = classical::fit(*classifier, &train, &config.classical, seed)?;
            let acc = |m: &FeatureMatrix| -> Result<f64> {
                if m.is_empty() {
                    return Ok(f64::NAN);
                }
                Ok(metrics(&fitted.predict(m)?.labels, &m.labels)?.accuracy)
            };
            record.train_accuracy = acc(&train)?;
            record.val_accuracy = acc(&matrix(Split::Val)?)?;
            let test = matrix(Split::Test)?;
            record.test = metrics(&fitted.predict(&test)?.labels, &test.labels)?;
            Ok(TrainedRun { record, history: None, model: None, fitted: Some(fitted) })
        }
    }
}

fn collect(label: String, runs: Vec<TrainedRun>) -> ExperimentOutcome {
    let mut histories = Vec::new();
    let mut records = Vec::new();
    for r in runs {
        histories.extend(r.history);
        records.push(r.record);
    }
    ExperimentOutcome { report: MetricsReport::from_repeats(label, records), histories }
}

/// Full pipeline `repeats` times; repeat `i` uses seed `seed + i` for
/// balancing, splitting, initialization and batching.
pub fn run_experiment(config: &ExperimentConfig, pool: &[AlignedSeries]) -> Result<ExperimentOutcome> {
    config.validate()?;
    let samples = build_samples(config, pool)?;
    let mut runs = Vec::with_capacity(config.repeats);
    for i in 0..config.repeats {
        let seed = config.seed.wrapping_add(i as u64);
        let data = split_samples(config, samples.clone(), seed)?;
        runs.push(run_once(config, &data, None, i, seed)?);
    }
    Ok(collect(config.label(), runs))
}

/// Random-label control within one asset class: per repeat, a seeded half
/// of the assets is labelled 1 and the rest 0, then the experiment proceeds
/// as usual.
pub fn run_control(config: &ExperimentConfig, pool: &[AlignedSeries], class: AssetClass) -> Result<ExperimentOutcome> {
    config.validate()?;
    let members: Vec<AlignedSeries> = pool.iter().filter(|s| s.asset_class == class).cloned().collect();
    if members.len() < 4 {
        return Err(Error::TooFewAssets { count: members.len(), needed: 4 });
    }
    let samples = build_samples(config, &members)?;
    let label = format!("control-{}-{}", class_name(class), config.label());
    let mut runs = Vec::with_capacity(config.repeats);
    for i in 0..config.repeats {
        let seed = config.seed.wrapping_add(i as u64);
        let mut ids: Vec<&str> = members.iter().map(|s| s.asset_id.as_str()).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let positive: BTreeSet<&str> = ids[..ids.len() / 2].iter().copied().collect();
        let relabelled = samples.iter().map(|s| Sample { label: positive.contains(s.asset_id.as_str()) as u8, ..s.clone() }).collect();
        let data = split_samples(config, relabelled, seed)?;
        let mut run = run_once(config, &data, None, i, seed)?;
        run.record.experiment = label.clone();
        run.record.positive_assets = Some(positive.iter().map(|s| s.to_string()).collect());
        runs.push(run);
    }
    Ok(collect(label, runs))
}

fn class_name(c: AssetClass) -> &'static str {
    match c {
        AssetClass::Crypto => "crypto",
        AssetClass::Stock => "stock",
    }
}

/// Baseline architecture plus each variant, all on the split drawn from
/// `config.seed`; repeat `i` re-initializes with seed `seed + i`.
pub fn run_robustness(config: &ExperimentConfig, pool: &[AlignedSeries], variants: &[String]) -> Result<Vec<(String, ExperimentOutcome)>> {
    config.validate()?;
    let (model, base) = match &config.track {
        Track::Neural { model, arch } => (*model, arch.clone()),
        Track::Classical { .. } => return Err(Error::UnsupportedKind("robustness sweeps of classical models".into())),
    };
    let data = split_samples(config, build_samples(config, pool)?, config.seed)?;
    let (c, l) = data.shape().ok_or(Error::EmptyTrainSet)?;
    let shape = InputShape::new(l, c);
    let mut arms: Vec<(String, Option<String>)> = vec![(base.clone().unwrap_or_else(|| "baseline".into()), base)];
    arms.extend(variants.iter().map(|v| (v.clone(), Some(v.clone()))));
    for (_, arch) in &arms {
        config.build_model(model, arch.as_deref(), shape, config.seed)?;
    }
    let mut out = Vec::with_capacity(arms.len());
    for (name, arch) in arms {
        let label = format!("robustness-{}-{name}", config.label());
        let mut runs = Vec::with_capacity(config.repeats);
        for i in 0..config.repeats {
            let seed = config.seed.wrapping_add(i as u64);
            let mut run = run_once(config, &data, arch.as_deref(), i, seed)?;
            run.record.experiment = label.clone();
            runs.push(run);
        }
        out.push((name, collect(label, runs)));
    }
    Ok(out)
}
