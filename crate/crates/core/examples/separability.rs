//! Two synthetic classes (smooth vs rough AR(1) paths) and how well each
//! track separates them.
//!
//! cargo run --example separability -- [model-or-classifier ...]

use std::time::Instant;

use cryptostock::archdsl::ModelName;
use cryptostock::classical::ClassifierKind;
use cryptostock::features::FeatureSetting;
use cryptostock::harness::{run_experiment, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::train::TrainConfig;

fn main() -> cryptostock::Result<()> {
    let names: Vec<String> = std::env::args().skip(1).collect();
    let names = if names.is_empty() { vec!["CNN".into(), "GRU".into(), "Autoencoder".into(), "RF".into()] } else { names };
    let spec = SyntheticSpec::default();
    let pool = spec.generate()?;
    for name in names {
        let track = match name.parse::<ClassifierKind>() {
            Ok(classifier) => Track::Classical { classifier, features: FeatureSetting::PR },
            Err(_) => Track::Neural { model: name.parse::<ModelName>()?, arch: None },
        };
        let config = ExperimentConfig {
            track,
            repeats: 1,
            width_divisor: 4,
            train: TrainConfig { epochs: 125, patience: Some(20), ..TrainConfig::default() },
            data: DataSource::Synthetic(spec.clone()),
            ..ExperimentConfig::default()
        };
        let t = Instant::now();
        let out = run_experiment(&config, &pool)?;
        let r = &out.report.repeats[0];
        println!(
            "{:<12} test acc {:.3}  f1 {:.3}  train acc {:.3}  epochs {:?}  {:.1}s",
            name,
            r.test.accuracy,
            r.test.f1,
            r.train_accuracy,
            r.epochs_run,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
