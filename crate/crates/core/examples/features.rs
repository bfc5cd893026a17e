//! The seventeen statistical features of a window, and per-class CDFs of one
//! of them written as CSV.
//!
//! cargo run --example features -- [feature] [out.csv]

use cryptostock::dataset::{segment, Channels, Granularity};
use cryptostock::features::{extract_features, FeatureSetting, FEATURE_NAMES};
use cryptostock::harness::{cdf_points, feature_by_class, save_cdf, SyntheticSpec};

fn main() -> cryptostock::Result<()> {
    let mut args = std::env::args().skip(1);
    let feature = args.next().unwrap_or_else(|| "autocorr_1".into());
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("cdf.csv").display().to_string());

    let pool = SyntheticSpec { days: 40, ..SyntheticSpec::default() }.generate()?;
    let samples: Vec<_> = pool.iter().flat_map(|s| segment(s, Granularity::Daily, Channels::CloseOnly)).collect();

    let first = extract_features(&samples[0].values)?;
    println!("{} day {}:", samples[0].asset_id, samples[0].period_id);
    for (name, v) in FEATURE_NAMES.iter().zip(first.to_array()) {
        println!("  {name:<17} {v:>14.6}");
    }

    let classes = feature_by_class(&samples, FeatureSetting::R, &feature)?;
    for (class, values) in &classes {
        let pts = cdf_points(values);
        let median = pts.iter().find(|p| p.1 >= 0.5).map(|p| p.0).unwrap_or(f64::NAN);
        println!("{class}: {} returns windows, median {feature} {median:.4}", values.len());
    }
    save_cdf(&classes, std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
