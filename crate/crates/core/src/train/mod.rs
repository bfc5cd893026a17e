//! Losses, Adam, the supervised loop with best-validation selection, and
//! grid search.

mod adam;
mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss, loss_grad, loss_logit, loss_logit_grad, LossKind, PROB_CLAMP};

use crate::archdsl::{ForwardCtx, ModelGraph};
use crate::tensor::{Mode, Tape, Tensor};
use crate::{Error, Result};

/// Inputs `[n, channels, length]` with one binary label per row.
#[derive(Clone, Debug)]
pub struct TensorSet {
    pub inputs: Tensor<f32>,
    pub labels: Vec<f64>,
}

impl TensorSet {
    pub fn new(inputs: Tensor<f32>, labels: Vec<f64>) -> Result<Self> {
        if inputs.rank() != 3 || inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch { op: "tensor set", left: inputs.shape().to_vec(), right: vec![labels.len()] });
        }
        Ok(TensorSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row_len(&self) -> usize {
        let s = self.inputs.shape();
        s[1] * s[2]
    }

    /// Copies the rows at `idx` into a new batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor<f32>, Vec<f64>) {
        let s = self.inputs.shape();
        let rl = self.row_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(idx.len() * rl);
        for &i in idx {
            data.extend_from_slice(&src[i * rl..(i + 1) * rl]);
        }
        let t = Tensor::new(&[idx.len(), s[1], s[2]], data).expect("batch shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            loss: LossKind::Bce,
            batch_size: 128,
            epochs: 500,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.epochs.iter().find(|r| r.epoch == e)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for r in &self.epochs {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

fn accuracy(p: &[f32], y: &[f64]) -> usize {
    p.iter().zip(y).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count()
}

/// Probabilities for every row, in evaluation mode, `batch_size` rows at a time.
pub fn predict(model: &ModelGraph, set: &TensorSet, batch_size: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.gather(chunk);
        out.extend(model.predict(x)?);
    }
    Ok(out)
}

/// Mean loss and accuracy over `set` in evaluation mode.
pub fn evaluate(model: &ModelGraph, set: &TensorSet, kind: LossKind, batch_size: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let p = predict(model, set, batch_size)?;
    let total: f64 = p.iter().zip(&set.labels).map(|(&p, &y)| loss(kind, p as f64, y)).sum();
    let n = set.len() as f64;
    Ok((total / n, accuracy(&p, &set.labels) as f64 / n))
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation loss.
pub fn fit(model: &mut ModelGraph, train: &TensorSet, val: &TensorSet, config: &TrainConfig) -> Result<History> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::MissingSplit("train"));
    }
    if val.is_empty() {
        return Err(Error::MissingSplit("val"));
    }
    let mut history = History::default();
    let mut state = AdamState::new(model.params().iter().map(|p| p.tensor.len()));
    let adam = config.adam();
    let kind: Arc<dyn crate::tensor::PointwiseLoss> = Arc::new(config.loss);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<Tensor<f32>>)> = None;
    let mut since_best = 0usize;
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.gather(chunk);
            let mut tape = Tape::<f32>::new();
            let vars = model.register(&mut tape);
            let xv = tape.constant(x);
            let ctx = ForwardCtx {
                mode: Mode::Train,
                seed: config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step),
                dropout: config.dropout,
            };
            step += 1;
            let z = model.forward_logits(&mut tape, &vars, xv, ctx)?;
            let l = tape.logit_loss(z, &y, kind.clone())?;
            let lv = tape.value(l).item() as f64;
            if !lv.is_finite() {
                return Err(Error::DivergedLoss { epoch, value: lv });
            }
            loss_sum += lv * chunk.len() as f64;
            correct += tape.value(z).data().iter().zip(&y).filter(|(&z, &y)| (z >= 0.0) == (y >= 0.5)).count();
            let grads = tape.backward(l)?;
            let zero: Vec<Vec<f32>> =
                vars.iter().map(|&v| if grads.slice(v).is_some() { Vec::new() } else { vec![0.0; tape.value(v).len()] }).collect();
            let g: Vec<&[f32]> = vars.iter().zip(&zero).map(|(&v, z)| grads.slice(v).unwrap_or(z.as_slice())).collect();
            let mut theta: Vec<&mut [f32]> = model.params_mut().iter_mut().map(|p| p.tensor.data_mut()).collect();
            adam_step(&mut theta, &g, &mut state, &adam);
        }
        let n = train.len() as f64;
        let (val_loss, val_acc) = evaluate(model, val, config.loss, config.batch_size.max(256))?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch, value: val_loss });
        }
        history.epochs.push(EpochRecord { epoch, train_loss: loss_sum / n, train_acc: correct as f64 / n, val_loss, val_acc });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params().iter().map(|p| p.tensor.clone()).collect()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, tensors)) = best {
        for (p, t) in model.params_mut().iter_mut().zip(tensors) {
            p.tensor = t;
        }
    }
    Ok(history)
}

/// Hyperparameter name to candidate values. Keys are visited in sorted order.
pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub values: BTreeMap<String, f64>,
    pub val_acc: Option<f64>,
    pub val_loss: Option<f64>,
    /// Set when training the cell failed, e.g. on divergence.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: TrainConfig,
    pub best_cell: usize,
    pub cells: Vec<CellResult>,
}

fn apply(cfg: &mut TrainConfig, key: &str, v: f64) -> Result<()> {
    let whole = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidConfig(format!("`{key}` needs a whole number, got {v}")))
        }
    };
    match key {
        "learning_rate" => cfg.learning_rate = v,
        "batch_size" => cfg.batch_size = whole(v)?,
        "epochs" => cfg.epochs = whole(v)?,
        "dropout" => cfg.dropout = v,
        "patience" => cfg.patience = Some(whole(v)?),
        "beta1" => cfg.beta1 = v,
        "beta2" => cfg.beta2 = v,
        "epsilon" => cfg.epsilon = v,
        "focal_alpha" | "focal_gamma" => {
            let (mut a, mut g) = match cfg.loss {
                LossKind::Focal { alpha, gamma } => (alpha, gamma),
                _ => (0.25, 2.0),
            };
            if key == "focal_alpha" {
                a = v
            } else {
                g = v
            }
            cfg.loss = LossKind::Focal { alpha: a, gamma: g };
        }
        other => return Err(Error::InvalidConfig(format!("unknown grid key `{other}`"))),
    }
    Ok(())
}

/// Evaluates every cell of the Cartesian product, each from a fresh copy of
/// `template`. Best cell: highest validation accuracy, then lower
/// validation loss, then earliest cell.
pub fn grid_search(template: &ModelGraph, train: &TensorSet, val: &TensorSet, base: &TrainConfig, grid: &Grid) -> Result<GridOutcome> {
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(Error::InvalidConfig("grid must have at least one value per key".into()));
    }
    let keys: Vec<&String> = grid.keys().collect();
    let total: usize = grid.values().map(|v| v.len()).product();
    let mut cells = Vec::with_capacity(total);
    let mut best: Option<(usize, f64, f64, TrainConfig)> = None;
    for cell in 0..total {
        let mut rem = cell;
        let mut values = BTreeMap::new();
        let mut cfg = base.clone();
        // Last key varies fastest.
        let mut picks = vec![0usize; keys.len()];
        for (i, k) in keys.iter().enumerate().rev() {
            let n = grid[*k].len();
            picks[i] = rem % n;
            rem /= n;
        }
        for (i, k) in keys.iter().enumerate() {
            let v = grid[*k][picks[i]];
            apply(&mut cfg, k, v)?;
            values.insert((*k).clone(), v);
        }
        let mut model = template.clone();
        let res = fit(&mut model, train, val, &cfg).and_then(|h| {
            let r = *h.best().ok_or(Error::MissingSplit("val"))?;
            Ok((r.val_acc, r.val_loss))
        });
        match res {
            Ok((acc, l)) => {
                let better = match &best {
                    None => true,
                    Some((_, ba, bl, _)) => acc > *ba || (acc == *ba && l < *bl),
                };
                if better {
                    best = Some((cell, acc, l, cfg));
                }
                cells.push(CellResult { values, val_acc: Some(acc), val_loss: Some(l), error: None });
            }
            Err(e) => cells.push(CellResult { values, val_acc: None, val_loss: None, error: Some(e.to_string()) }),
        }
    }
    let (best_cell, _, _, best) = best.ok_or_else(|| Error::InvalidConfig("every grid cell failed to train".into()))?;
    Ok(GridOutcome { best, best_cell, cells })
}
