use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Confusion counts and derived scores, crypto (label 1) positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Metrics { tp, fp, tn, fn_, accuracy: ratio(tp + tn, tp + fp + tn + fn_), precision, recall, f1 }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores hard predictions against labels; any nonzero value counts as 1.
pub fn metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Outcome of one repeat of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub experiment: String,
    pub repeat: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Epochs actually run (neural track only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    /// Assets given pseudo-label 1 (control runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_assets: Option<Vec<String>>,
    pub test: Metrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt() };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub repeats: usize,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub train_accuracy: MeanStd,
}

/// Per-repeat records plus their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub repeats: Vec<RepeatRecord>,
    pub summary: Summary,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line<'a> {
    Repeat(&'a RepeatRecord),
    Summary(&'a Summary),
}

impl MetricsReport {
    pub fn from_repeats(experiment: impl Into<String>, repeats: Vec<RepeatRecord>) -> Self {
        let col = |f: &dyn Fn(&RepeatRecord) -> f64| repeats.iter().map(f).collect::<Vec<_>>();
        let summary = Summary {
            experiment: experiment.into(),
            repeats: repeats.len(),
            accuracy: MeanStd::of(&col(&|r| r.test.accuracy)),
            f1: MeanStd::of(&col(&|r| r.test.f1)),
            precision: MeanStd::of(&col(&|r| r.test.precision)),
            recall: MeanStd::of(&col(&|r| r.test.recall)),
            train_accuracy: MeanStd::of(&col(&|r| r.train_accuracy)),
        };
        MetricsReport { repeats, summary }
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.summary.accuracy.mean
    }

    /// One JSON object per repeat followed by the summary, each on its own line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let lines = self.repeats.iter().map(Line::Repeat).chain(std::iter::once(Line::Summary(&self.summary)));
        for line in lines {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
