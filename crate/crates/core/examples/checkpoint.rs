//! Train one network, save it, load it back and confirm the reloaded copy
//! predicts the same probabilities.
//!
//! cargo run --example checkpoint -- [model] [epochs]

use cryptostock::archdsl::{load_checkpoint, save_checkpoint, InputShape, ModelName};
use cryptostock::dataset::Split;
use cryptostock::harness::{build_samples, split_samples, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::train::{evaluate, fit, predict};

fn main() -> cryptostock::Result<()> {
    let mut args = std::env::args().skip(1);
    let model_name: ModelName = args.next().unwrap_or_else(|| "CNN".into()).parse()?;
    let epochs: usize = args.next().map(|e| e.parse().expect("epochs")).unwrap_or(20);

    let spec = SyntheticSpec { days: 30, ..SyntheticSpec::default() };
    let mut config = ExperimentConfig {
        track: Track::Neural { model: model_name, arch: None },
        width_divisor: 4,
        data: DataSource::Synthetic(spec.clone()),
        ..ExperimentConfig::default()
    };
    config.train.epochs = epochs;
    let samples = build_samples(&config, &spec.generate()?)?;
    let mut data = split_samples(&config, samples, 0)?;
    data.normalize_all();
    let (train, val, test) = (data.tensors(Split::Train)?, data.tensors(Split::Val)?, data.tensors(Split::Test)?);

    let (channels, length) = data.shape().expect("non-empty");
    let shape = InputShape::new(length, channels);
    let mut model = config.build_model(model_name, None, shape, 0)?;
    let history = fit(&mut model, &train, &val, &config.train_config(model_name, 0))?;
    for r in history.epochs.iter().step_by((epochs / 5).max(1)) {
        println!("epoch {:>3}  train loss {:.4}  val loss {:.4}  val acc {:.3}", r.epoch, r.train_loss, r.val_loss, r.val_acc);
    }
    println!("kept epoch {:?}", history.best_epoch);

    let dir = std::env::temp_dir().join("cryptostock-checkpoint");
    save_checkpoint(&model, &dir)?;
    let back = load_checkpoint(&dir)?;
    let (a, b) = (predict(&model, &test, 64)?, predict(&back, &test, 64)?);
    assert_eq!(a, b);
    let (loss, acc) = evaluate(&back, &test, config.loss_for(model_name), 64)?;
    println!("reloaded from {}: test loss {loss:.4}, test acc {acc:.3}", dir.display());
    Ok(())
}
