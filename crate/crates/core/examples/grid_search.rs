//! Grid search over learning rate and batch size, picking the cell with the
//! best validation accuracy.
//!
//! cargo run --example grid_search

use cryptostock::archdsl::{InputShape, ModelName};
use cryptostock::dataset::Split;
use cryptostock::harness::{build_samples, split_samples, DataSource, ExperimentConfig, SyntheticSpec, Track};
use cryptostock::train::{grid_search, Grid};

fn main() -> cryptostock::Result<()> {
    let spec = SyntheticSpec { days: 30, ..SyntheticSpec::default() };
    let mut config = ExperimentConfig {
        track: Track::Neural { model: ModelName::Mlp, arch: None },
        width_divisor: 4,
        data: DataSource::Synthetic(spec.clone()),
        ..ExperimentConfig::default()
    };
    config.train.epochs = 10;
    let mut data = split_samples(&config, build_samples(&config, &spec.generate()?)?, 0)?;
    data.normalize_all();
    let (train, val) = (data.tensors(Split::Train)?, data.tensors(Split::Val)?);
    let (channels, length) = data.shape().expect("non-empty");
    let shape = InputShape::new(length, channels);
    let template = config.build_model(ModelName::Mlp, None, shape, 0)?;

    let grid: Grid =
        [("learning_rate".to_string(), vec![1e-4, 1e-3, 1e-2]), ("batch_size".to_string(), vec![16.0, 64.0])].into_iter().collect();
    let out = grid_search(&template, &train, &val, &config.train_config(ModelName::Mlp, 0), &grid)?;
    for (i, c) in out.cells.iter().enumerate() {
        let mark = if i == out.best_cell { "*" } else { " " };
        println!("{mark} {:?}  val acc {:?}  val loss {:?}", c.values, c.val_acc, c.val_loss);
    }
    println!("best: lr {} batch {}", out.best.learning_rate, out.best.batch_size);
    Ok(())
}
