//! Random-label control: assets of a single synthetic class are split in
//! half at random and labelled 0/1. Accuracy should sit at chance.
//!
//! cargo run --example control -- [model ...]

use std::time::Instant;

use cryptostock::archdsl::ModelName;
use cryptostock::harness::{run_control, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::ingest::AssetClass;
use cryptostock::train::TrainConfig;

fn main() -> cryptostock::Result<()> {
    let names: Vec<String> = std::env::args().skip(1).collect();
    let names = if names.is_empty() { vec!["MLP".into(), "CNN".into(), "LSTM".into()] } else { names };
    let spec = SyntheticSpec::exchangeable(AssetClass::Crypto, 8, 100, 0.9, 7);
    let pool = spec.generate()?;
    for name in names {
        let config = ExperimentConfig {
            track: Track::Neural { model: name.parse::<ModelName>()?, arch: None },
            repeats: 5,
            width_divisor: 4,
            test_fraction: 0.3,
            train: TrainConfig { epochs: 40, patience: Some(8), ..TrainConfig::default() },
            data: DataSource::Synthetic(spec.clone()),
            ..ExperimentConfig::default()
        };
        let t = Instant::now();
        let out = run_control(&config, &pool, AssetClass::Crypto)?;
        let s = &out.report.summary;
        let per: Vec<String> = out.report.repeats.iter().map(|r| format!("{:.3}", r.test.accuracy)).collect();
        println!(
            "{:<6} test acc {:.3} ± {:.3} [{}]  train acc {:.3}  {:.1}s",
            name,
            s.accuracy.mean,
            s.accuracy.std,
            per.join(" "),
            s.train_accuracy.mean,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
