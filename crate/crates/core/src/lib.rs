pub mod archdsl;
pub mod classical;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod layers;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
