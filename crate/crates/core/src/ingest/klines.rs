use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde_json::Value;

use super::{AssetClass, Bar, Ohlc, OhlcvSeries};
use crate::{Error, Result};

/// Largest page the public endpoint serves.
pub const PAGE_LIMIT: usize = 1000;

/// One lock per endpoint URL so concurrent clients never overlap requests.
fn endpoint_gate(endpoint: &str) -> Arc<Mutex<()>> {
    static GATES: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = GATES.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    map.entry(endpoint.to_string()).or_default().clone()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub requests: u64,
    pub retries: u64,
}

pub struct KlinesClient {
    agent: ureq::Agent,
    endpoint: String,
    gate: Arc<Mutex<()>>,
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    requests: AtomicU64,
    retries: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry { rate_limited: bool, wait: Option<Duration>, why: String },
    Fail(Error),
}

impl KlinesClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let endpoint = endpoint.into();
        let agent = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(30))).build().into();
        KlinesClient {
            agent,
            gate: endpoint_gate(&endpoint),
            endpoint,
            max_retries: 5,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    pub fn with_backoff(mut self, base: Duration, max: Duration, max_retries: u32) -> Self {
        self.base_backoff = base;
        self.max_backoff = max;
        self.max_retries = max_retries;
        self
    }

    pub fn stats(&self) -> FetchStats {
        FetchStats { requests: self.requests.load(Ordering::Relaxed), retries: self.retries.load(Ordering::Relaxed) }
    }

    fn attempt(&self, symbol: &str, interval: &str, start: i64, end: i64) -> Attempt {
        let res = {
            let _serial = self.gate.lock().unwrap_or_else(|p| p.into_inner());
            self.requests.fetch_add(1, Ordering::Relaxed);
            self.agent
                .get(&self.endpoint)
                .query("symbol", symbol)
                .query("interval", interval)
                .query("startTime", start.to_string())
                .query("endTime", end.to_string())
                .query("limit", PAGE_LIMIT.to_string())
                .call()
        };
        let mut resp = match res {
            Ok(r) => r,
            Err(e) => return Attempt::Retry { rate_limited: false, wait: None, why: e.to_string() },
        };
        let status = resp.status().as_u16();
        match status {
            200 => match resp.body_mut().read_to_string() {
                Ok(body) => Attempt::Done(body),
                Err(e) => Attempt::Retry { rate_limited: false, wait: None, why: e.to_string() },
            },
            429 | 418 => {
                let wait = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                Attempt::Retry { rate_limited: true, wait, why: format!("HTTP {status}") }
            }
            500..=599 => Attempt::Retry { rate_limited: false, wait: None, why: format!("HTTP {status}") },
            _ => {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                Attempt::Fail(Error::Network(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>())))
            }
        }
    }

    fn page(&self, symbol: &str, interval: &str, start: i64, end: i64) -> Result<String> {
        let mut tries = 0u32;
        loop {
            match self.attempt(symbol, interval, start, end) {
                Attempt::Done(body) => return Ok(body),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry { rate_limited, wait, why } => {
                    if tries >= self.max_retries {
                        return Err(if rate_limited {
                            Error::RateLimited { retry_after_secs: wait.map(|w| w.as_secs()) }
                        } else {
                            Error::Network(format!("{why} after {} retries", tries))
                        });
                    }
                    let backoff = self.base_backoff.saturating_mul(1u32 << tries.min(16));
                    std::thread::sleep(wait.unwrap_or(backoff).min(self.max_backoff));
                    tries += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    /// Pages through `[start_ms, end_ms]` until an empty page or the range end.
    pub fn fetch(&self, symbol: &str, interval: &str, start_ms: i64, end_ms: i64) -> Result<OhlcvSeries> {
        if start_ms >= end_ms {
            return Err(Error::EmptyRange);
        }
        let mut bars: Vec<Bar> = Vec::new();
        let mut last_open: Option<i64> = None;
        let mut cursor = start_ms;
        while cursor <= end_ms {
            let body = self.page(symbol, interval, cursor, end_ms)?;
            let rows = parse_page(&body)?;
            if rows.is_empty() {
                break;
            }
            let mut advanced = false;
            for (open_ms, ohlc) in rows {
                if open_ms > end_ms || last_open.is_some_and(|l| open_ms <= l) {
                    continue;
                }
                let minute = open_ms.div_euclid(60_000);
                if bars.last().is_some_and(|b| b.minute == minute) {
                    continue;
                }
                bars.push(Bar { minute, ohlc });
                last_open = Some(open_ms);
                advanced = true;
            }
            match last_open {
                Some(l) if advanced => cursor = l + 1,
                _ => break,
            }
        }
        OhlcvSeries::new(symbol, AssetClass::Crypto, bars)
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Array-of-arrays body: `[open_time_ms, open, high, low, close, ...]`.
fn parse_page(body: &str) -> Result<Vec<(i64, Option<Ohlc>)>> {
    let v: Value = serde_json::from_str(body)?;
    let arr = v.as_array().ok_or_else(|| Error::Format("klines response is not an array".into()))?;
    arr.iter()
        .map(|row| {
            let r = row.as_array().filter(|r| r.len() >= 5).ok_or_else(|| Error::Format("kline row too short".into()))?;
            let t = r[0].as_i64().ok_or_else(|| Error::Format("kline open time is not an integer".into()))?;
            let p: Option<Vec<f64>> = r[1..5].iter().map(number).collect();
            let ohlc = p.map(|p| Ohlc { open: p[0], high: p[1], low: p[2], close: p[3] }).filter(Ohlc::is_consistent);
            Ok((t, ohlc))
        })
        .collect()
}

/// Fetches with a default client; see [`KlinesClient::fetch`].
pub fn fetch_klines(endpoint: &str, symbol: &str, interval: &str, start_ms: i64, end_ms: i64) -> Result<OhlcvSeries> {
    KlinesClient::new(endpoint).fetch(symbol, interval, start_ms, end_ms)
}
