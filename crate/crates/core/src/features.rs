//! Interpretable per-sample statistics and the six feature-set layouts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{to_returns, zscore, Sample};
use crate::{Error, Result};

pub const FEATURE_NAMES: [&str; 17] = [
    "mean",
    "variance",
    "max",
    "min",
    "kurtosis",
    "skewness",
    "autocorr_1",
    "autocorr_2",
    "autocorr_3",
    "mean_diff",
    "mean_abs_diff",
    "peak_to_peak",
    "auc",
    "entropy",
    "n_max_peaks",
    "n_min_peaks",
    "n_zero_crossings",
];

pub const ENTROPY_BINS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean: f64,
    pub variance: f64,
    pub max: f64,
    pub min: f64,
    pub kurtosis: f64,
    pub skewness: f64,
    pub autocorr_1: f64,
    pub autocorr_2: f64,
    pub autocorr_3: f64,
    pub mean_diff: f64,
    pub mean_abs_diff: f64,
    pub peak_to_peak: f64,
    pub auc: f64,
    pub entropy: f64,
    pub n_max_peaks: f64,
    pub n_min_peaks: f64,
    pub n_zero_crossings: f64,
}

impl FeatureVector {
    /// Fields in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; 17] {
        [
            self.mean,
            self.variance,
            self.max,
            self.min,
            self.kurtosis,
            self.skewness,
            self.autocorr_1,
            self.autocorr_2,
            self.autocorr_3,
            self.mean_diff,
            self.mean_abs_diff,
            self.peak_to_peak,
            self.auc,
            self.entropy,
            self.n_max_peaks,
            self.n_min_peaks,
            self.n_zero_crossings,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.to_array()[i])
    }
}

/// Interior points strictly above (below) both neighbours.
pub fn count_peaks(x: &[f64]) -> Result<(usize, usize)> {
    if x.len() < 3 {
        return Err(Error::SeriesTooShort { len: x.len(), needed: 3 });
    }
    let mut hi = 0;
    let mut lo = 0;
    for w in x.windows(3) {
        if w[1] > w[0] && w[1] > w[2] {
            hi += 1;
        } else if w[1] < w[0] && w[1] < w[2] {
            lo += 1;
        }
    }
    Ok((hi, lo))
}

/// Sign changes between successive non-zero values; exact zeros are skipped.
pub fn zero_crossings(x: &[f64]) -> usize {
    let mut prev: Option<bool> = None;
    let mut n = 0;
    for &v in x {
        if v == 0.0 || v.is_nan() {
            continue;
        }
        let pos = v > 0.0;
        if prev.is_some_and(|p| p != pos) {
            n += 1;
        }
        prev = Some(pos);
    }
    n
}

/// Shannon entropy (nats) of a `bins`-bin equal-width histogram over
/// `[min, max]`; the maximum lands in the last bin.
pub fn entropy(x: &[f64], bins: usize) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if x.is_empty() || bins == 0 || !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for &v in x {
        let b = (((v - lo) / width) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = x.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn extract_features(x: &[f64]) -> Result<FeatureVector> {
    let l = x.len();
    if l < 4 {
        return Err(Error::SeriesTooShort { len: l, needed: 4 });
    }
    let n = l as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let ss = m2;
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let constant = !(m2.sqrt() > 1e-12 * mean.abs().max(1.0));
    let acf = |k: usize| {
        if constant {
            return 0.0;
        }
        (0..l - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / ss
    };
    let (max, min) = x.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let diffs = x.windows(2).map(|w| w[1] - w[0]);
    let mean_diff = diffs.clone().sum::<f64>() / (n - 1.0);
    let mean_abs_diff = diffs.map(f64::abs).sum::<f64>() / (n - 1.0);
    let auc = x.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>();
    let (hi, lo) = count_peaks(x)?;
    Ok(FeatureVector {
        mean,
        variance: m2,
        max,
        min,
        kurtosis: if constant { 0.0 } else { m4 / (m2 * m2) - 3.0 },
        skewness: if constant { 0.0 } else { m3 / m2.powf(1.5) },
        autocorr_1: acf(1),
        autocorr_2: acf(2),
        autocorr_3: acf(3),
        mean_diff,
        mean_abs_diff,
        peak_to_peak: max - min,
        auc,
        entropy: entropy(x, ENTROPY_BINS),
        n_max_peaks: hi as f64,
        n_min_peaks: lo as f64,
        n_zero_crossings: zero_crossings(x) as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSetting {
    /// Raw close prices.
    P,
    /// Raw returns.
    R,
    /// z-scored prices.
    NP,
    /// z-scored returns.
    NR,
    #[serde(rename = "P+R")]
    PR,
    #[serde(rename = "NP+NR")]
    NPNR,
}

impl FeatureSetting {
    pub const ALL: [FeatureSetting; 6] =
        [FeatureSetting::P, FeatureSetting::R, FeatureSetting::NP, FeatureSetting::NR, FeatureSetting::PR, FeatureSetting::NPNR];

    pub fn width(self) -> usize {
        match self {
            FeatureSetting::PR | FeatureSetting::NPNR => 34,
            _ => 17,
        }
    }

    pub fn column_names(self) -> Vec<String> {
        let plain = || FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        match self {
            FeatureSetting::PR | FeatureSetting::NPNR => {
                ["p_", "r_"].iter().flat_map(|p| FEATURE_NAMES.iter().map(move |n| format!("{p}{n}"))).collect()
            }
            _ => plain(),
        }
    }
}

impl std::fmt::Display for FeatureSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureSetting::P => "P",
            FeatureSetting::R => "R",
            FeatureSetting::NP => "NP",
            FeatureSetting::NR => "NR",
            FeatureSetting::PR => "P+R",
            FeatureSetting::NPNR => "NP+NR",
        })
    }
}

impl std::str::FromStr for FeatureSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        FeatureSetting::ALL
            .into_iter()
            .find(|f| f.to_string() == k || (k == "PR" && *f == FeatureSetting::PR) || (k == "NPNR" && *f == FeatureSetting::NPNR))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown feature setting `{s}`")))
    }
}

/// Feature row for one raw (not z-scored) sample, from its close channel.
pub fn assemble(setting: FeatureSetting, sample: &Sample) -> Result<Vec<f64>> {
    let close = sample.channel(sample.channels - 1).to_vec();
    let returns = || -> Result<Vec<f64>> {
        let single = Sample { values: close.clone(), channels: 1, ..sample.clone() };
        Ok(to_returns(&single)?.values)
    };
    let f = |v: &[f64]| extract_features(v).map(|f| f.to_array().to_vec());
    Ok(match setting {
        FeatureSetting::P => f(&close)?,
        FeatureSetting::R => f(&returns()?)?,
        FeatureSetting::NP => f(&zscore(&close))?,
        FeatureSetting::NR => f(&zscore(&returns()?))?,
        FeatureSetting::PR => [f(&close)?, f(&returns()?)?].concat(),
        FeatureSetting::NPNR => [f(&zscore(&close))?, f(&zscore(&returns()?))?].concat(),
    })
}

/// Rows of features with binary labels and named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn build(setting: FeatureSetting, samples: &[&Sample]) -> Result<Self> {
        let rows = samples.iter().map(|s| assemble(setting, s)).collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix { rows, labels: samples.iter().map(|s| s.label).collect(), column_names: setting.column_names() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    /// Header of column names then `label`; one line per row.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{},label", self.column_names.join(","))?;
        for (r, y) in self.rows.iter().zip(&self.labels) {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{y}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }
}
