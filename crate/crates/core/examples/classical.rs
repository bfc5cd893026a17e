//! The five feature-based classifiers on every feature setting.
//!
//! cargo run --example classical

use cryptostock::classical::{fit, ClassicalParams, ClassifierKind};
use cryptostock::dataset::{segment, stratified_split, Channels, Granularity, Split};
use cryptostock::features::{FeatureMatrix, FeatureSetting};
use cryptostock::harness::{metrics, SyntheticSpec};

fn main() -> cryptostock::Result<()> {
    let pool = SyntheticSpec { days: 40, ..SyntheticSpec::default() }.generate()?;
    let samples = pool.iter().flat_map(|s| segment(s, Granularity::Daily, Channels::CloseOnly)).collect();
    let data = stratified_split(samples, 0, 0.3, 0.0)?;
    let pick = |split: Split| -> Vec<_> { data.indices(split).into_iter().map(|i| &data.samples[i]).collect() };
    let (train, test) = (pick(Split::Train), pick(Split::Test));
    let params = ClassicalParams { rf_trees: 50, gb_trees: 50, ..ClassicalParams::default() };

    print!("{:<6}", "");
    for kind in ClassifierKind::ALL {
        print!("{:>8}", kind.to_string());
    }
    println!();
    for setting in FeatureSetting::ALL {
        let tr = FeatureMatrix::build(setting, &train)?;
        let te = FeatureMatrix::build(setting, &test)?;
        print!("{:<6}", setting.to_string());
        for kind in ClassifierKind::ALL {
            let pred = fit(kind, &tr, &params, 0)?.predict(&te)?;
            print!("{:>8.3}", metrics(&pred.labels, &te.labels)?.accuracy);
        }
        println!();
    }

    let fitted = fit(ClassifierKind::RF, &FeatureMatrix::build(FeatureSetting::PR, &train)?, &params, 0)?;
    let mut imp = fitted.feature_importance()?;
    imp.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("RF on P+R, top features:");
    for (name, v) in imp.iter().take(5) {
        println!("  {name:<20} {v:.3}");
    }
    Ok(())
}
