//! Resized variants of a model trained on the same split as its default
//! layout.
//!
//! cargo run --example robustness -- [model] [width-list ...]

use cryptostock::archdsl::ModelName;
use cryptostock::harness::{run_robustness, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::train::TrainConfig;

fn main() -> cryptostock::Result<()> {
    let mut args = std::env::args().skip(1);
    let model: ModelName = args.next().unwrap_or_else(|| "CNN".into()).parse()?;
    let mut variants: Vec<String> = args.collect();
    if variants.is_empty() {
        variants = vec!["32-32-64".into(), "32-32-64-64-128-128".into()];
    }
    let spec = SyntheticSpec { days: 60, ..SyntheticSpec::default() };
    let config = ExperimentConfig {
        track: Track::Neural { model, arch: None },
        repeats: 2,
        width_divisor: 4,
        train: TrainConfig { epochs: 30, patience: Some(8), ..TrainConfig::default() },
        data: DataSource::Synthetic(spec.clone()),
        ..ExperimentConfig::default()
    };
    for (name, out) in run_robustness(&config, &spec.generate()?, &variants)? {
        let s = &out.report.summary;
        println!("{name:<24} test acc {:.3} ± {:.3}", s.accuracy.mean, s.accuracy.std);
    }
    Ok(())
}
