use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{AssetClass, Bar, Ohlc, OhlcvSeries};
use crate::{Error, Result};

const COLUMNS: [&str; 5] = ["timestamp", "open", "high", "low", "close"];

/// RFC 3339 with any offset, or a naive date-time taken as UTC.
fn parse_minute(s: &str) -> Option<i64> {
    let s = s.trim();
    let secs = if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        t.timestamp()
    } else {
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())?
            .and_utc()
            .timestamp()
    };
    Some(secs.div_euclid(60))
}

/// Reads `timestamp,open,high,low,close` bars (extra columns ignored).
///
/// Rows whose prices do not parse, are non-positive or violate
/// `low <= open, close <= high` are kept as missing bars. Row numbers in
/// errors count file lines from 1, the header being line 1.
pub fn load_csv(path: &Path, asset_id: &str, asset_class: AssetClass) -> Result<OhlcvSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, asset_id, asset_class)
}

pub(crate) fn read_csv(r: impl std::io::Read, asset_id: &str, asset_class: AssetClass) -> Result<OhlcvSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyFile),
        Some(h) => h?,
    };
    let names: Vec<String> = header.iter().map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    let mut cols = [0usize; 5];
    for (slot, want) in cols.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| n == want)
            .ok_or_else(|| Error::MalformedHeader { found: header.iter().collect::<Vec<_>>().join(",") })?;
    }
    let mut rows: Vec<(usize, Bar)> = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let ts = rec.get(cols[0]).unwrap_or("");
        let minute = parse_minute(ts).ok_or_else(|| Error::UnparseableTimestamp { row: line, value: ts.to_string() })?;
        let price = |c: usize| rec.get(cols[c]).and_then(|v| v.parse::<f64>().ok());
        let ohlc = match (price(1), price(2), price(3), price(4)) {
            (Some(open), Some(high), Some(low), Some(close)) => Some(Ohlc { open, high, low, close }),
            _ => None,
        }
        .filter(Ohlc::is_consistent);
        rows.push((line, Bar { minute, ohlc }));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    rows.sort_by_key(|(_, b)| b.minute);
    for w in rows.windows(2) {
        if w[0].1.minute == w[1].1.minute {
            return Err(Error::DuplicateTimestamp { row: w[0].0.max(w[1].0), minute: w[1].1.minute });
        }
    }
    OhlcvSeries::new(asset_id, asset_class, rows.into_iter().map(|(_, b)| b).collect())
}

/// Writes bars in the format [`load_csv`] reads; missing bars get empty prices.
pub fn write_csv(series: &OhlcvSeries, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "timestamp,open,high,low,close").map_err(io)?;
    for b in series.bars() {
        let t = DateTime::from_timestamp(b.minute * 60, 0).expect("timestamp in range");
        let ts = t.format("%Y-%m-%dT%H:%M:%SZ");
        match b.ohlc {
            Some(o) => writeln!(w, "{ts},{},{},{},{}", o.open, o.high, o.low, o.close),
            None => writeln!(w, "{ts},,,,"),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
