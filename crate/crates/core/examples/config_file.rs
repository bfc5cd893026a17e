//! An experiment described in TOML, run, and its results written as JSON
//! lines.
//!
//! cargo run --example config_file -- [config.toml]

use cryptostock::harness::{run_experiment, ExperimentConfig};

const DEFAULT: &str = r#"
name = "cnn-weekly"
granularity = "weekly"
channels = "ohlc"
repeats = 2
width_divisor = 4

[track]
kind = "neural"
model = "CNN"

[train]
epochs = 15
batch_size = 16

[data]
source = "synthetic"
days = 60
"#;

fn main() -> cryptostock::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(|e| cryptostock::Error::io(&path, e))?,
        None => DEFAULT.to_string(),
    };
    let config = ExperimentConfig::from_toml(&text)?;
    config.validate()?;
    println!("{}", config.label());
    let out = run_experiment(&config, &config.data.load()?)?;
    print!("{}", out.report.to_jsonl());
    Ok(())
}
