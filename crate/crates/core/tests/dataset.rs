use chrono::NaiveDate;
use cryptostock::dataset::{balance, full_weeks, normalize, segment, stratified_split, Channels, Dataset, Granularity, Sample, Split};
use cryptostock::ingest::{AlignedSeries, AssetClass, TradingCalendar};
use proptest::prelude::*;

fn series(days: Vec<NaiveDate>, class: AssetClass) -> AlignedSeries {
    let n = days.len() * 391;
    let values = (0..n)
        .map(|i| {
            let p = 100.0 + (i as f64 * 0.37).sin() + i as f64 * 1e-3;
            [p, p + 0.5, p - 0.5, p + 0.1]
        })
        .collect();
    AlignedSeries::new("S", class, days, 391, values).unwrap()
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn daily_segments_cover_calendar() {
    let cal = TradingCalendar::nyse_2023_2024();
    let s = series(cal.trading_days().to_vec(), AssetClass::Crypto);
    let daily = segment(&s, Granularity::Daily, Channels::AllFour);
    assert_eq!(daily.len(), 252);
    assert!(daily.iter().all(|d| d.length == 391 && d.channels == 4 && d.label == 1));
    // Channel order: open, high, low, close.
    let first = &daily[0];
    assert_eq!(first.channel(1)[0] - first.channel(0)[0], 0.5);
    assert_eq!(first.channel(3)[0], s.values[0][3]);
    let close = segment(&s, Granularity::Daily, Channels::CloseOnly);
    assert_eq!(close[5].values, daily[5].channel(3));
}

#[test]
fn holiday_week_is_skipped() {
    // Week of 2023-11-20 loses Thursday 23rd.
    let days = TradingCalendar::weekdays(date(2023, 11, 13), date(2023, 11, 24), &[date(2023, 11, 23)], chrono_tz::America::New_York)
        .unwrap()
        .trading_days()
        .to_vec();
    assert_eq!(days.len(), 9);
    let w = segment(&series(days, AssetClass::Stock), Granularity::Weekly, Channels::CloseOnly);
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].length, 1955);
}

#[test]
fn ten_days_two_weeks() {
    let days =
        TradingCalendar::weekdays(date(2024, 1, 8), date(2024, 1, 19), &[], chrono_tz::America::New_York).unwrap().trading_days().to_vec();
    assert_eq!(days.len(), 10);
    let s = series(days, AssetClass::Stock);
    let w = segment(&s, Granularity::Weekly, Channels::AllFour);
    assert_eq!(w.len(), 2);
    assert!(w.iter().all(|x| x.length == 5 * 391 && x.label == 0));
    assert_eq!(w[1].period_id, 1);
    assert_eq!(w[1].channel(0)[0], s.values[5 * 391][0]);
}

#[test]
fn full_year_has_expected_weeks() {
    let cal = TradingCalendar::nyse_2023_2024();
    let weeks = full_weeks(cal.trading_days());
    // Mondays 2023-06-05 ..= 2024-05-20 give 51 candidate weeks; the weeks of
    // Jun 19, Jul 4, Sep 4, Nov 23, Dec 25, Jan 1, Jan 15, Feb 19 and Mar 29 each
    // lose a day, leaving 42.
    let mondays = cal.trading_days().iter().filter(|d| chrono::Datelike::weekday(*d) == chrono::Weekday::Mon).count();
    assert!(weeks.len() <= mondays);
    let s = series(cal.trading_days().to_vec(), AssetClass::Crypto);
    assert_eq!(segment(&s, Granularity::Weekly, Channels::CloseOnly).len(), weeks.len());
    assert_eq!(weeks.len(), 42);
}

#[test]
fn normalized_samples_are_standard() {
    let cal = TradingCalendar::nyse_2023_2024();
    let s = series(cal.trading_days()[..20].to_vec(), AssetClass::Crypto);
    for x in segment(&s, Granularity::Daily, Channels::AllFour) {
        let z = normalize(&x);
        for c in 0..4 {
            let ch = z.channel(c);
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            let v = ch.iter().map(|a| (a - m).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-4);
        }
    }
}

#[test]
fn manifest_round_trip() {
    let cal = TradingCalendar::nyse_2023_2024();
    let mut samples = segment(&series(cal.trading_days()[..12].to_vec(), AssetClass::Crypto), Granularity::Daily, Channels::CloseOnly);
    samples.extend(segment(&series(cal.trading_days()[..12].to_vec(), AssetClass::Stock), Granularity::Daily, Channels::CloseOnly));
    let d = stratified_split(samples, 4, 0.2, 0.2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    let header = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert!(header.starts_with("# cryptostock-dataset v1 channels=1 length=391 seed=4\n"));
    std::fs::write(dir.path().join("samples.csv"), header.replace("v1", "v9")).unwrap();
    assert!(Dataset::load(dir.path()).is_err());
}

#[test]
fn tensors_follow_split() {
    let cal = TradingCalendar::nyse_2023_2024();
    let mut samples = segment(&series(cal.trading_days()[..10].to_vec(), AssetClass::Crypto), Granularity::Daily, Channels::AllFour);
    samples.extend(segment(&series(cal.trading_days()[..10].to_vec(), AssetClass::Stock), Granularity::Daily, Channels::AllFour));
    let d = stratified_split(samples, 1, 0.2, 0.2).unwrap();
    let t = d.tensors(Split::Test).unwrap();
    assert_eq!(t.inputs.shape(), [4, 4, 391]);
    assert_eq!(t.labels.iter().filter(|&&y| y == 1.0).count(), 2);
}

fn labels(pos: usize, neg: usize) -> Vec<Sample> {
    (0..pos + neg)
        .map(|i| Sample {
            values: vec![i as f64],
            channels: 1,
            length: 1,
            label: (i < pos) as u8,
            asset_id: format!("a{}", i % 7),
            period_id: i as u32,
        })
        .collect()
}

proptest! {
    #[test]
    fn split_partitions_and_preserves_proportions(pos in 5usize..200, neg in 5usize..200, seed in any::<u64>()) {
        let d = stratified_split(labels(pos, neg), seed, 0.2, 0.2).unwrap();
        let total: usize = [Split::Train, Split::Val, Split::Test].iter().map(|s| d.indices(*s).len()).sum();
        prop_assert_eq!(total, pos + neg);
        for (label, n) in [(1u8, pos), (0u8, neg)] {
            let test_exact = n as f64 * 0.2;
            let val_exact = (n as f64 - d.count(Split::Test, label) as f64) * 0.2;
            prop_assert!((d.count(Split::Test, label) as f64 - test_exact).abs() < 1.0);
            prop_assert!((d.count(Split::Val, label) as f64 - val_exact).abs() < 1.0);
        }
        // Overall share of positives in each split stays within one sample of the global share.
        for s in [Split::Train, Split::Val, Split::Test] {
            let m = d.indices(s).len() as f64;
            let expected = m * pos as f64 / (pos + neg) as f64;
            prop_assert!((d.count(s, 1) as f64 - expected).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn balance_equalizes_classes(pos in 0usize..60, neg in 0usize..60, seed in any::<u64>()) {
        let b = balance(labels(pos, neg), seed);
        let p = b.iter().filter(|s| s.label == 1).count();
        prop_assert_eq!(p, pos.min(neg));
        prop_assert_eq!(b.len() - p, pos.min(neg));
    }
}
