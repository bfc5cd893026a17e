use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{AlignedSeries, AssetClass, TradingCalendar};
use crate::{Error, Result};

/// Minute prices driven by a unit-variance AR(1) log-price factor, one
/// persistence coefficient per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub crypto_assets: usize,
    pub stock_assets: usize,
    /// Trading days per asset, taken from the start of the bundled calendar.
    pub days: usize,
    pub crypto_phi: f64,
    pub stock_phi: f64,
    /// Log-price units per unit of the factor.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { crypto_assets: 2, stock_assets: 2, days: 100, crypto_phi: 0.99, stock_phi: 0.6, scale: 0.01, seed: 0 }
    }
}

impl SyntheticSpec {
    /// Assets of one class only, all drawn from the same process.
    pub fn exchangeable(class: AssetClass, assets: usize, days: usize, phi: f64, seed: u64) -> Self {
        let (crypto_assets, stock_assets) = match class {
            AssetClass::Crypto => (assets, 0),
            AssetClass::Stock => (0, assets),
        };
        SyntheticSpec { crypto_assets, stock_assets, days, crypto_phi: phi, stock_phi: phi, seed, ..SyntheticSpec::default() }
    }

    pub fn generate(&self) -> Result<Vec<AlignedSeries>> {
        let cal = TradingCalendar::nyse_2023_2024();
        if self.days == 0 || self.days > cal.len() {
            return Err(Error::InvalidConfig(format!("synthetic days must lie in 1..={}", cal.len())));
        }
        for phi in [self.crypto_phi, self.stock_phi] {
            if !(phi.abs() < 1.0) {
                return Err(Error::InvalidConfig(format!("AR coefficient {phi} is not stationary")));
            }
        }
        let days = cal.trading_days()[..self.days].to_vec();
        let slots = cal.slots_per_day();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let classes = std::iter::repeat_n((AssetClass::Crypto, self.crypto_phi, "C"), self.crypto_assets)
            .chain(std::iter::repeat_n((AssetClass::Stock, self.stock_phi, "S"), self.stock_assets));
        let mut out = Vec::new();
        for (i, (class, phi, tag)) in classes.enumerate() {
            let values = ar1_bars(&mut rng, phi, self.scale, 100.0 * (1.0 + i as f64), days.len() * slots);
            out.push(AlignedSeries::new(format!("{tag}{i:02}"), class, days.clone(), slots, values)?);
        }
        Ok(out)
    }
}

fn ar1_bars(rng: &mut ChaCha8Rng, phi: f64, scale: f64, base: f64, n: usize) -> Vec<[f64; 4]> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    let mut prev = base * (scale * x).exp();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        x = phi * x + innov * e;
        let close = base * (scale * x).exp();
        out.push([prev, prev.max(close), prev.min(close), close]);
        prev = close;
    }
    out
}
