use std::collections::HashMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use chrono_tz::Tz;

use crate::{Error, Result};

/// NYSE trading days from 2023-06-01 through 2024-05-31.
pub const NYSE_2023_2024: &str = include_str!("../../data/nyse_2023-06-01_2024-05-31.txt");

#[derive(Clone, Debug, PartialEq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
    index: HashMap<NaiveDate, usize>,
    /// Minute of day, exchange-local, inclusive.
    pub session_open: u32,
    pub session_close: u32,
    pub timezone: Tz,
}

impl TradingCalendar {
    /// Regular 9:30-16:00 session. Days must be strictly increasing weekdays.
    pub fn new(days: Vec<NaiveDate>, timezone: Tz) -> Result<Self> {
        Self::with_session(days, timezone, 570, 960)
    }

    pub fn with_session(days: Vec<NaiveDate>, timezone: Tz, session_open: u32, session_close: u32) -> Result<Self> {
        if session_open > session_close || session_close >= 24 * 60 {
            return Err(Error::Calendar(format!("bad session {session_open}..{session_close}")));
        }
        for w in days.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Calendar(format!("dates out of order at {}", w[1])));
            }
        }
        if let Some(d) = days.iter().find(|d| matches!(d.weekday(), Weekday::Sat | Weekday::Sun)) {
            return Err(Error::Calendar(format!("{d} falls on a weekend")));
        }
        let index = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        Ok(TradingCalendar { days, index, session_open, session_close, timezone })
    }

    /// Every weekday in `[start, end]` except `holidays`.
    pub fn weekdays(start: NaiveDate, end: NaiveDate, holidays: &[NaiveDate], timezone: Tz) -> Result<Self> {
        let days = start
            .iter_days()
            .take_while(|d| *d <= end)
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !holidays.contains(d))
            .collect();
        Self::new(days, timezone)
    }

    /// Parses `# timezone: <IANA name>` followed by one ISO date per line.
    /// Blank lines and other `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tz = None;
        let mut days = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.trim().strip_prefix("timezone:") {
                    let name = name.trim();
                    tz = Some(name.parse::<Tz>().map_err(|_| Error::Calendar(format!("unknown timezone `{name}`")))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let d =
                NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|_| Error::Calendar(format!("line {}: bad date `{line}`", n + 1)))?;
            days.push(d);
        }
        let tz = tz.ok_or_else(|| Error::Calendar("missing `# timezone:` header".into()))?;
        Self::new(days, tz)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn nyse_2023_2024() -> Self {
        Self::parse(NYSE_2023_2024).expect("bundled calendar parses")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# timezone: {}\n", self.timezone.name());
        for d in &self.days {
            s.push_str(&format!("{d}\n"));
        }
        s
    }

    pub fn trading_days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn day_index(&self, d: NaiveDate) -> Option<usize> {
        self.index.get(&d).copied()
    }

    /// Minutes per session, both endpoints included.
    pub fn slots_per_day(&self) -> usize {
        (self.session_close - self.session_open + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}
