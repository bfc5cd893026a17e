use chrono::{NaiveDate, TimeZone, Timelike, Utc};

use super::{AssetClass, Bar, Ohlc, OhlcvSeries, TradingCalendar};
use crate::{Error, Result};

/// Bars placed on the per-day session grid, gaps still present.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionSeries {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub days: Vec<NaiveDate>,
    pub slots_per_day: usize,
    /// `days.len() * slots_per_day` entries, day-major.
    pub slots: Vec<Option<Ohlc>>,
}

impl SessionSeries {
    pub fn present(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn day(&self, i: usize) -> &[Option<Ohlc>] {
        &self.slots[i * self.slots_per_day..(i + 1) * self.slots_per_day]
    }
}

/// Dense session-aligned prices, rows ordered (open, high, low, close).
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSeries {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub days: Vec<NaiveDate>,
    pub slots_per_day: usize,
    pub values: Vec<[f64; 4]>,
    /// Position in `days` of each row.
    pub day_index: Vec<u32>,
}

impl AlignedSeries {
    pub fn new(
        asset_id: impl Into<String>,
        asset_class: AssetClass,
        days: Vec<NaiveDate>,
        slots_per_day: usize,
        values: Vec<[f64; 4]>,
    ) -> Result<Self> {
        if values.len() != days.len() * slots_per_day {
            return Err(Error::LengthMismatch { left: values.len(), right: days.len() * slots_per_day });
        }
        let day_index = (0..values.len()).map(|r| (r / slots_per_day.max(1)) as u32).collect();
        Ok(AlignedSeries { asset_id: asset_id.into(), asset_class, days, slots_per_day, values, day_index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn day(&self, i: usize) -> &[[f64; 4]] {
        &self.values[i * self.slots_per_day..(i + 1) * self.slots_per_day]
    }

    /// Timestamped bars on `cal`'s session clock, for writing back to CSV.
    pub fn to_ohlcv(&self, cal: &TradingCalendar) -> Result<OhlcvSeries> {
        let mut bars = Vec::with_capacity(self.values.len());
        for (i, day) in self.days.iter().enumerate() {
            for (k, v) in self.day(i).iter().enumerate() {
                let local = day.and_hms_opt(0, 0, 0).expect("midnight") + chrono::Duration::minutes(cal.session_open as i64 + k as i64);
                let t = cal
                    .timezone
                    .from_local_datetime(&local)
                    .single()
                    .ok_or_else(|| Error::Calendar(format!("ambiguous local time {local}")))?;
                bars.push(Bar { minute: t.timestamp() / 60, ohlc: Some(Ohlc { open: v[0], high: v[1], low: v[2], close: v[3] }) });
            }
        }
        OhlcvSeries::new(self.asset_id.clone(), self.asset_class, bars)
    }

    pub fn to_session(&self) -> SessionSeries {
        SessionSeries {
            asset_id: self.asset_id.clone(),
            asset_class: self.asset_class,
            days: self.days.clone(),
            slots_per_day: self.slots_per_day,
            slots: self.values.iter().map(|v| Some(Ohlc { open: v[0], high: v[1], low: v[2], close: v[3] })).collect(),
        }
    }
}

/// Keeps bars whose exchange-local time falls inside a session, laid out on
/// the full slot grid of every trading day between the first and last bar.
pub fn session_filter(series: &OhlcvSeries, cal: &TradingCalendar) -> SessionSeries {
    let spd = cal.slots_per_day();
    let local = |minute: i64| {
        let t = Utc.timestamp_opt(minute * 60, 0).single().expect("timestamp in range");
        let l = t.with_timezone(&cal.timezone);
        (l.date_naive(), l.hour() * 60 + l.minute())
    };
    let (days, first) = match (series.bars().first(), series.bars().last()) {
        (Some(a), Some(b)) => {
            let (d0, d1) = (local(a.minute).0, local(b.minute).0);
            let days: Vec<NaiveDate> = cal.trading_days().iter().copied().filter(|d| *d >= d0 && *d <= d1).collect();
            let first = days.first().and_then(|d| cal.day_index(*d)).unwrap_or(0);
            (days, first)
        }
        _ => (Vec::new(), 0),
    };
    let mut slots = vec![None; days.len() * spd];
    for bar in series.bars() {
        let (date, mod_) = local(bar.minute);
        if mod_ < cal.session_open || mod_ > cal.session_close {
            continue;
        }
        if let Some(ci) = cal.day_index(date) {
            let di = ci - first;
            slots[di * spd + (mod_ - cal.session_open) as usize] = bar.ohlc;
        }
    }
    SessionSeries { asset_id: series.asset_id.clone(), asset_class: series.asset_class, days, slots_per_day: spd, slots }
}

/// Forward fill within each day, then back-fill the day's leading gap from
/// its first present bar. Never crosses a day boundary.
pub fn fill_missing(series: &SessionSeries) -> Result<AlignedSeries> {
    let spd = series.slots_per_day;
    let mut values = Vec::with_capacity(series.slots.len());
    for (i, date) in series.days.iter().enumerate() {
        let day = series.day(i);
        let first = day.iter().flatten().next().ok_or_else(|| Error::EmptyDay { asset_id: series.asset_id.clone(), date: *date })?;
        let mut carry = *first;
        for slot in day {
            if let Some(o) = slot {
                carry = *o;
            }
            values.push(carry.as_array());
        }
    }
    AlignedSeries::new(series.asset_id.clone(), series.asset_class, series.days.clone(), spd, values)
}
