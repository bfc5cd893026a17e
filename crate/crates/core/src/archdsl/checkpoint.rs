//! Checkpoints: a JSON manifest next to a little-endian `f32` blob holding
//! every parameter in declared order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{BuildOptions, InputShape, ModelGraph, ModelName};
use super::notation::parse_arch;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cryptostock-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelName,
    arch: String,
    input_shape: InputShape,
    options: BuildOptions,
    seed: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &ModelGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.name(),
        arch: model.notation(),
        input_shape: model.input_shape(),
        options: BuildOptions {
            // Widths in `arch` are already scaled.
            width_divisor: 1,
            ..model.options().clone()
        },
        seed: model.seed(),
        params: model.params().iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() }).collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let mut blob = Vec::with_capacity(model.parameter_count() * 4);
    for p in model.params() {
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = dir.join(BLOB);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelGraph> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint {} v{}", manifest.format, manifest.version)));
    }
    let specs = parse_arch(&manifest.arch)?;
    let mut model = ModelGraph::from_specs(manifest.model, specs, manifest.input_shape, manifest.seed, manifest.options)?;
    let declared: Vec<ParamEntry> =
        model.params().iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() }).collect();
    if declared != manifest.params {
        return Err(Error::Format("parameter list does not match the architecture".into()));
    }
    let path = dir.join(BLOB);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() != model.parameter_count() * 4 {
        return Err(Error::Format(format!("blob holds {} bytes, expected {}", blob.len(), model.parameter_count() * 4)));
    }
    let mut chunks = blob.chunks_exact(4);
    for p in model.params_mut() {
        for v in p.tensor.data_mut() {
            let c = chunks.next().expect("length checked");
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(model)
}
