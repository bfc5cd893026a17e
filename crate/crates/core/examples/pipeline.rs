//! Raw minute bars to model-ready tensors: write synthetic bars to CSV, read
//! them back, keep regular-session minutes, fill gaps, cut daily and weekly
//! windows, balance, split and save.
//!
//! cargo run --example pipeline -- [out-dir]

use std::path::PathBuf;

use cryptostock::dataset::{balance, full_weeks, segment, stratified_split, Channels, Dataset, Granularity, Split};
use cryptostock::harness::SyntheticSpec;
use cryptostock::ingest::{fill_missing, load_csv, session_filter, write_csv, TradingCalendar};

fn main() -> cryptostock::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cryptostock-pipeline"));
    std::fs::create_dir_all(&out).map_err(|e| cryptostock::Error::io(&out, e))?;
    let cal = TradingCalendar::nyse_2023_2024();
    let spec = SyntheticSpec { crypto_assets: 2, stock_assets: 3, days: 30, ..SyntheticSpec::default() };

    let mut daily = Vec::new();
    let mut weekly = Vec::new();
    for s in spec.generate()? {
        let path = out.join(format!("{}.csv", s.asset_id));
        write_csv(&s.to_ohlcv(&cal)?, &path)?;
        let raw = load_csv(&path, &s.asset_id, s.asset_class)?;
        let session = session_filter(&raw, &cal);
        let aligned = fill_missing(&session)?;
        println!(
            "{} {:?}: {} bars on disk, {} of {} session minutes present, {} full weeks",
            s.asset_id,
            s.asset_class,
            raw.len(),
            session.present(),
            aligned.len(),
            full_weeks(&aligned.days).len()
        );
        daily.extend(segment(&aligned, Granularity::Daily, Channels::CloseOnly));
        weekly.extend(segment(&aligned, Granularity::Weekly, Channels::AllFour));
    }
    println!("daily windows {}, weekly windows {}", daily.len(), weekly.len());
    println!("weekly sample shape: {} channels x {} steps", weekly[0].channels, weekly[0].length);

    let balanced = balance(daily, 0);
    let mut data: Dataset = stratified_split(balanced, 0, 0.2, 0.2)?;
    data.normalize_all();
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {} crypto / {} stock", data.count(split, 1), data.count(split, 0));
    }
    let dir = out.join("dataset");
    data.save(&dir)?;
    let back = Dataset::load(&dir)?;
    assert_eq!(back, data);
    println!("saved and reloaded {} samples under {}", back.samples.len(), dir.display());
    Ok(())
}
