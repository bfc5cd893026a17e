//! Architecture notation and model instantiation.

mod checkpoint;
mod model;
mod notation;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{build_model, BuildOptions, ForwardCtx, InputShape, ModelGraph, ModelName, Padding, Param, PoolSpec};
pub use notation::{parse_arch, render, LayerSpec};
