//! Labeled daily/weekly samples, per-sample z-scoring and stratified splits.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, Weekday};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::AlignedSeries;
use crate::tensor::Tensor;
use crate::train::TensorSet;
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "cryptostock-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Daily,
    Weekly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    /// Close price only.
    #[serde(alias = "close")]
    CloseOnly,
    /// Open, high, low, close.
    #[serde(alias = "all", alias = "ohlc")]
    AllFour,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::CloseOnly => 1,
            Channels::AllFour => 4,
        }
    }

    fn columns(self) -> &'static [usize] {
        match self {
            Channels::CloseOnly => &[3],
            Channels::AllFour => &[0, 1, 2, 3],
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "daily" => Ok(Granularity::Daily),
            "weekly" => Ok(Granularity::Weekly),
            o => Err(Error::InvalidConfig(format!("unknown granularity `{o}`"))),
        }
    }
}

impl std::str::FromStr for Channels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "close" | "closeonly" | "1" => Ok(Channels::CloseOnly),
            "all" | "allfour" | "ohlc" | "4" => Ok(Channels::AllFour),
            o => Err(Error::InvalidConfig(format!("unknown channel set `{o}`"))),
        }
    }
}

/// One window, stored channel-major: `values[c * length + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub values: Vec<f64>,
    pub channels: usize,
    pub length: usize,
    /// 1 = crypto, 0 = stock.
    pub label: u8,
    pub asset_id: String,
    /// Trading-day index for daily samples, running week count for weekly ones.
    pub period_id: u32,
}

impl Sample {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    fn map_channels(&self, length: usize, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Sample> {
        let mut values = Vec::with_capacity(self.channels * length);
        for c in 0..self.channels {
            values.extend(f(self.channel(c))?);
        }
        Ok(Sample { values, length, ..self.clone_meta() })
    }

    fn clone_meta(&self) -> Sample {
        Sample {
            values: Vec::new(),
            channels: self.channels,
            length: self.length,
            label: self.label,
            asset_id: self.asset_id.clone(),
            period_id: self.period_id,
        }
    }
}

fn collect(series: &AlignedSeries, days: &[usize], channels: Channels, period_id: u32) -> Sample {
    let cols = channels.columns();
    let length = days.len() * series.slots_per_day;
    let mut values = Vec::with_capacity(cols.len() * length);
    for &c in cols {
        for &d in days {
            values.extend(series.day(d).iter().map(|row| row[c]));
        }
    }
    Sample { values, channels: cols.len(), length, label: series.asset_class.label(), asset_id: series.asset_id.clone(), period_id }
}

/// Indices of the Monday of every Monday-to-Friday run of five trading days.
pub fn full_weeks(days: &[chrono::NaiveDate]) -> Vec<usize> {
    (0..days.len().saturating_sub(4))
        .filter(|&i| days[i].weekday() == Weekday::Mon && (1..5).all(|k| days[i + k] == days[i] + Duration::days(k as i64)))
        .collect()
}

pub fn segment(series: &AlignedSeries, granularity: Granularity, channels: Channels) -> Vec<Sample> {
    match granularity {
        Granularity::Daily => (0..series.days.len()).map(|d| collect(series, &[d], channels, d as u32)).collect(),
        Granularity::Weekly => full_weeks(&series.days)
            .into_iter()
            .enumerate()
            .map(|(w, m)| collect(series, &[m, m + 1, m + 2, m + 3, m + 4], channels, w as u32))
            .collect(),
    }
}

/// z-scores one channel with the population variance; near-constant
/// channels become all zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

pub fn normalize(sample: &Sample) -> Sample {
    sample.map_channels(sample.length, |c| Ok(zscore(c))).expect("z-score is infallible")
}

/// Relative changes `(p_t - p_{t-1}) / p_{t-1}` per channel, one shorter.
pub fn to_returns(sample: &Sample) -> Result<Sample> {
    if sample.length < 2 {
        return Err(Error::SeriesTooShort { len: sample.length, needed: 2 });
    }
    sample.map_channels(sample.length - 1, |c| {
        c.windows(2)
            .enumerate()
            .map(|(i, w)| if w[0] == 0.0 { Err(Error::ZeroPrice { index: i }) } else { Ok((w[1] - w[0]) / w[0]) })
            .collect()
    })
}

/// Undersamples the larger class to the size of the smaller one. Kept
/// samples retain their input order.
pub fn balance(samples: Vec<Sample>, seed: u64) -> Vec<Sample> {
    let pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    let neg: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label != 1).collect();
    let (major, minor) = if pos.len() >= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; samples.len()];
    for &i in &minor {
        keep[i] = true;
    }
    for j in sample(&mut rng, major.len(), minor.len()) {
        keep[major[j]] = true;
    }
    samples.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
    pub seed: u64,
}

pub const MIN_PER_LABEL: usize = 5;

/// Per-label shuffled split: `round(n * test_frac)` to test, then
/// `round(rest * val_frac)` to validation, remainder to train.
pub fn stratified_split(samples: Vec<Sample>, seed: u64, test_frac: f64, val_frac: f64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&test_frac) || !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidConfig("split fractions must lie in [0, 1)".into()));
    }
    let mut by_label: BTreeMap<u8, Vec<usize>> = [(0, Vec::new()), (1, Vec::new())].into();
    for (i, s) in samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Train; samples.len()];
    for (&label, idx) in by_label.iter_mut() {
        if idx.len() < MIN_PER_LABEL {
            return Err(Error::TooFewSamples { label, count: idx.len(), needed: MIN_PER_LABEL });
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_frac).round() as usize;
        let n_val = ((idx.len() - n_test) as f64 * val_frac).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            split[i] = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(Dataset { samples, split, seed })
}

impl Dataset {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn count(&self, which: Split, label: u8) -> usize {
        self.samples.iter().zip(&self.split).filter(|(s, p)| **p == which && s.label == label).count()
    }

    pub fn normalize_all(&mut self) {
        for s in &mut self.samples {
            *s = normalize(s);
        }
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.channels, s.length))
    }

    /// Inputs `[n, channels, length]` for one split, cast to f32.
    pub fn tensors(&self, which: Split) -> Result<TensorSet> {
        let idx = self.indices(which);
        if idx.is_empty() {
            return Err(Error::MissingSplit(which.name()));
        }
        let (c, l) = self.shape().expect("non-empty");
        let mut data = Vec::with_capacity(idx.len() * c * l);
        for &i in &idx {
            data.extend(self.samples[i].values.iter().map(|&v| v as f32));
        }
        let labels = idx.iter().map(|&i| self.samples[i].label as f64).collect();
        TensorSet::new(Tensor::new(&[idx.len(), c, l], data)?, labels)
    }

    /// Writes `samples.csv` (versioned header, one record per sample) and
    /// `values.bin` (little-endian f64, fixed-size record per sample).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (c, l) = self.shape().unwrap_or((0, 0));
        let path = dir.join("samples.csv");
        let io = |e| Error::io(&path, e);
        let mut w = BufWriter::new(std::fs::File::create(&path).map_err(io)?);
        writeln!(w, "# {DATASET_FORMAT} v{DATASET_VERSION} channels={c} length={l} seed={}", self.seed).map_err(io)?;
        writeln!(w, "index,asset_id,period_id,label,split").map_err(io)?;
        for (i, (s, p)) in self.samples.iter().zip(&self.split).enumerate() {
            if s.asset_id.contains([',', '\n']) {
                return Err(Error::Format(format!("asset id `{}` contains a separator", s.asset_id)));
            }
            writeln!(w, "{i},{},{},{},{}", s.asset_id, s.period_id, s.label, p.name()).map_err(io)?;
        }
        w.flush().map_err(io)?;
        let blob = dir.join("values.bin");
        let mut b = BufWriter::new(std::fs::File::create(&blob).map_err(|e| Error::io(&blob, e))?);
        for s in &self.samples {
            for v in &s.values {
                b.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&blob, e))?;
            }
        }
        b.flush().map_err(|e| Error::io(&blob, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("samples.csv");
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = BufReader::new(f).lines();
        let head = lines.next().transpose().map_err(|e| Error::io(&path, e))?.unwrap_or_default();
        let fields: Vec<&str> = head.trim_start_matches("# ").split_whitespace().collect();
        if fields.first() != Some(&DATASET_FORMAT) || fields.get(1) != Some(&format!("v{DATASET_VERSION}").as_str()) {
            return Err(Error::Format(format!("unsupported dataset header `{head}`")));
        }
        let kv = |key: &str| -> Result<u64> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key)?.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("dataset header lacks `{key}`")))
        };
        let (c, l, seed) = (kv("channels")? as usize, kv("length")? as usize, kv("seed")?);
        let blob_path = dir.join("values.bin");
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let per = c * l * 8;
        let mut samples = Vec::new();
        let mut split = Vec::new();
        for (n, line) in lines.enumerate().skip(1) {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let r: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("samples.csv line {}: `{line}`", n + 2));
            if r.len() != 5 {
                return Err(bad());
            }
            let i: usize = r[0].parse().map_err(|_| bad())?;
            let chunk = blob.get(i * per..(i + 1) * per).ok_or_else(bad)?;
            samples.push(Sample {
                values: chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
                channels: c,
                length: l,
                label: r[3].parse().map_err(|_| bad())?,
                asset_id: r[1].to_string(),
                period_id: r[2].parse().map_err(|_| bad())?,
            });
            split.push(match r[4] {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                _ => return Err(bad()),
            });
        }
        if blob.len() != samples.len() * per {
            return Err(Error::Format("values.bin length does not match sample count".into()));
        }
        Ok(Dataset { samples, split, seed })
    }
}
