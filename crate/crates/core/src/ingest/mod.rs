//! Minute-bar ingestion: CSV files, an exchange klines endpoint, trading
//! session alignment and same-day gap filling.

mod align;
mod calendar;
mod csvfile;
mod klines;

use serde::{Deserialize, Serialize};

pub use align::{fill_missing, session_filter, AlignedSeries, SessionSeries};
pub use calendar::{TradingCalendar, NYSE_2023_2024};
pub use csvfile::{load_csv, write_csv};
pub use klines::{fetch_klines, FetchStats, KlinesClient};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetClass {
    Stock = 0,
    Crypto = 1,
}

impl AssetClass {
    /// Binary label: crypto is the positive class.
    pub fn label(self) -> u8 {
        self as u8
    }
}

impl std::str::FromStr for AssetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crypto" => Ok(AssetClass::Crypto),
            "stock" => Ok(AssetClass::Stock),
            other => Err(Error::InvalidConfig(format!("unknown asset class `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ohlc {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Ohlc {
    pub fn flat(price: f64) -> Self {
        Ohlc { open: price, high: price, low: price, close: price }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.open, self.high, self.low, self.close]
    }

    /// Positive prices with `low <= open, close <= high`.
    pub fn is_consistent(&self) -> bool {
        let a = self.as_array();
        a.iter().all(|p| p.is_finite() && *p > 0.0) && self.low <= self.open.min(self.close) && self.high >= self.open.max(self.close)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    /// Minutes since the Unix epoch, UTC.
    pub minute: i64,
    /// `None` when the source had no usable prices for this minute.
    pub ohlc: Option<Ohlc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OhlcvSeries {
    pub asset_id: String,
    pub asset_class: AssetClass,
    bars: Vec<Bar>,
}

impl OhlcvSeries {
    /// Validates strictly increasing timestamps and consistent present bars.
    /// Row numbers in errors are 0-based bar indices.
    pub fn new(asset_id: impl Into<String>, asset_class: AssetClass, bars: Vec<Bar>) -> Result<Self> {
        for (i, w) in bars.windows(2).enumerate() {
            if w[1].minute <= w[0].minute {
                return Err(Error::DuplicateTimestamp { row: i + 1, minute: w[1].minute });
            }
        }
        if let Some(i) = bars.iter().position(|b| b.ohlc.is_some_and(|o| !o.is_consistent())) {
            return Err(Error::InconsistentBar { row: i });
        }
        Ok(OhlcvSeries { asset_id: asset_id.into(), asset_class, bars })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }
}
