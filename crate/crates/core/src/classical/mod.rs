//! Feature-space classifiers: logistic regression, random forest, linear
//! SVM, k-nearest neighbours and gradient boosting.

mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::{Error, Result};
use tree::{Criterion, GrowSpec, Tree};

pub const DUMP_FORMAT: &str = "cryptostock-classical v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    LR,
    RF,
    SVM,
    KNN,
    GB,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] =
        [ClassifierKind::LR, ClassifierKind::RF, ClassifierKind::SVM, ClassifierKind::KNN, ClassifierKind::GB];
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalParams {
    pub rf_trees: usize,
    pub rf_max_depth: usize,
    pub gb_trees: usize,
    pub gb_max_depth: usize,
    pub gb_learning_rate: f64,
    pub knn_k: usize,
    /// L2 strength for LR and SVM.
    pub l2: f64,
    pub epochs: usize,
    /// Gradient step for LR; initial step for SVM (decays as 1/sqrt(t)).
    pub step: f64,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        ClassicalParams {
            rf_trees: 100,
            rf_max_depth: 12,
            gb_trees: 200,
            gb_max_depth: 3,
            gb_learning_rate: 0.1,
            knn_k: 5,
            l2: 1e-3,
            epochs: 500,
            step: 0.5,
        }
    }
}

/// Per-column mean and population standard deviation from the train split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = rows.iter().map(|r| r[j]).filter(|v| v.is_finite());
            let m = col.clone().sum::<f64>() / n;
            let v = col.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    /// Non-finite inputs map to 0, the training mean.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| {
                let z = (v - m) / s;
                if z.is_finite() {
                    z
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Model {
    Constant(u8),
    Linear { w: Vec<f64>, b: f64 },
    Knn { rows: Vec<Vec<f64>>, labels: Vec<u8>, k: usize },
    Forest(Vec<Tree>),
    Boost { init: f64, rate: f64, trees: Vec<Tree> },
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub kind: ClassifierKind,
    pub column_names: Vec<String>,
    pub standardizer: Standardizer,
    /// Training labels were all equal; the model predicts that label.
    pub degenerate: bool,
    importance: Option<Vec<f64>>,
    model: Model,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// Probability-like for LR, RF, KNN and GB; signed margin for SVM.
    pub scores: Vec<f64>,
    pub degenerate: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn logistic(x: &[Vec<f64>], y: &[f64], p: &ClassicalParams) -> Model {
    let (n, d) = (x.len() as f64, x[0].len());
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..p.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(y) {
            let e = sigmoid(dot(&w, row) + b) - t;
            gw.iter_mut().zip(row).for_each(|(g, v)| *g += e * v);
            gb += e;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= p.step * (g / n + p.l2 * *wj);
        }
        b -= p.step * gb / n;
    }
    Model::Linear { w, b }
}

fn svm(x: &[Vec<f64>], y: &[f64], p: &ClassicalParams) -> Model {
    let (n, d) = (x.len() as f64, x[0].len());
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for t in 1..=p.epochs {
        let eta = p.step / (t as f64).sqrt();
        let mut gw: Vec<f64> = w.iter().map(|wj| p.l2 * wj).collect();
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(y) {
            let s = 2.0 * t - 1.0;
            if s * (dot(&w, row) + b) < 1.0 {
                gw.iter_mut().zip(row).for_each(|(g, v)| *g -= s * v / n);
                gb -= s / n;
            }
        }
        w.iter_mut().zip(&gw).for_each(|(wj, g)| *wj -= eta * g);
        b -= eta * gb;
    }
    Model::Linear { w, b }
}

fn forest(x: &[Vec<f64>], y: &[f64], p: &ClassicalParams, rng: &mut ChaCha8Rng, imp: &mut [f64]) -> Model {
    let n = x.len();
    let d = x[0].len();
    let spec = GrowSpec {
        criterion: Criterion::Gini,
        max_depth: p.rf_max_depth,
        max_features: Some(((d as f64).sqrt().round() as usize).max(1)),
        hessian: None,
    };
    let trees = (0..p.rf_trees)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            Tree::grow(x, y, idx, &spec, rng, imp)
        })
        .collect();
    Model::Forest(trees)
}

fn boost(x: &[Vec<f64>], y: &[f64], p: &ClassicalParams, rng: &mut ChaCha8Rng, imp: &mut [f64]) -> Model {
    let n = x.len();
    let pos = y.iter().sum::<f64>() / n as f64;
    let init = (pos / (1.0 - pos)).ln();
    let mut f = vec![init; n];
    let mut trees = Vec::with_capacity(p.gb_trees);
    for _ in 0..p.gb_trees {
        let prob: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        let resid: Vec<f64> = y.iter().zip(&prob).map(|(t, q)| t - q).collect();
        let hess: Vec<f64> = prob.iter().map(|q| q * (1.0 - q)).collect();
        let spec = GrowSpec { criterion: Criterion::SquaredError, max_depth: p.gb_max_depth, max_features: None, hessian: Some(&hess) };
        let t = Tree::grow(x, &resid, (0..n).collect(), &spec, rng, imp);
        for (fi, row) in f.iter_mut().zip(x) {
            *fi += p.gb_learning_rate * t.predict(row);
        }
        trees.push(t);
    }
    Model::Boost { init, rate: p.gb_learning_rate, trees }
}

pub fn fit(kind: ClassifierKind, train: &FeatureMatrix, params: &ClassicalParams, seed: u64) -> Result<Fitted> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if train.labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    let standardizer = Standardizer::fit(&train.rows);
    let x: Vec<Vec<f64>> = train.rows.iter().map(|r| standardizer.apply(r)).collect();
    let y: Vec<f64> = train.labels.iter().map(|&l| l as f64).collect();
    let mut fitted = Fitted {
        kind,
        column_names: train.column_names.clone(),
        standardizer,
        degenerate: false,
        importance: None,
        model: Model::Constant(train.labels[0]),
    };
    if train.labels.iter().all(|&l| l == train.labels[0]) {
        fitted.degenerate = true;
        return Ok(fitted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imp = vec![0.0; train.width()];
    fitted.model = match kind {
        ClassifierKind::LR => logistic(&x, &y, params),
        ClassifierKind::SVM => svm(&x, &y, params),
        ClassifierKind::KNN => Model::Knn { rows: x, labels: train.labels.clone(), k: params.knn_k.max(1) },
        ClassifierKind::RF => forest(&x, &y, params, &mut rng, &mut imp),
        ClassifierKind::GB => boost(&x, &y, params, &mut rng, &mut imp),
    };
    if matches!(kind, ClassifierKind::RF | ClassifierKind::GB) {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        fitted.importance = Some(imp);
    }
    Ok(fitted)
}

impl Fitted {
    fn score(&self, row: &[f64]) -> (f64, u8) {
        match &self.model {
            Model::Constant(l) => (*l as f64, *l),
            Model::Linear { w, b } => {
                let z = dot(w, row) + b;
                match self.kind {
                    ClassifierKind::SVM => (z, (z >= 0.0) as u8),
                    _ => {
                        let p = sigmoid(z);
                        (p, (p >= 0.5) as u8)
                    }
                }
            }
            Model::Knn { rows, labels, k } => {
                let mut d: Vec<(f64, usize)> =
                    rows.iter().enumerate().map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), i)).collect();
                let k = (*k).min(d.len());
                d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let pos = d[..k].iter().filter(|(_, i)| labels[*i] == 1).count();
                let p = pos as f64 / k as f64;
                (p, (2 * pos > k) as u8)
            }
            Model::Forest(trees) => {
                let p = trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64;
                (p, (p >= 0.5) as u8)
            }
            Model::Boost { init, rate, trees } => {
                let z = init + rate * trees.iter().map(|t| t.predict(row)).sum::<f64>();
                let p = sigmoid(z);
                (p, (p >= 0.5) as u8)
            }
        }
    }

    pub fn predict(&self, test: &FeatureMatrix) -> Result<Prediction> {
        if test.width() != self.column_names.len() {
            return Err(Error::LengthMismatch { left: test.width(), right: self.column_names.len() });
        }
        let (scores, labels) = test.rows.iter().map(|r| self.score(&self.standardizer.apply(r))).unzip();
        Ok(Prediction { labels, scores, degenerate: self.degenerate })
    }

    /// Columns ranked by mean impurity decrease, ties by column index.
    pub fn feature_importance(&self) -> Result<Vec<(String, f64)>> {
        let imp = match (&self.importance, self.kind) {
            (Some(i), _) => i.clone(),
            (None, ClassifierKind::RF | ClassifierKind::GB) => vec![0.0; self.column_names.len()],
            (None, k) => return Err(Error::UnsupportedKind(k.to_string())),
        };
        let mut order: Vec<usize> = (0..imp.len()).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        Ok(order.into_iter().map(|i| (self.column_names[i].clone(), imp[i])).collect())
    }

    /// Human-readable model: standardization, then weights or trees.
    pub fn dump(&self) -> String {
        let mut s = format!("{DUMP_FORMAT}\nkind {}\ndegenerate {}\n", self.kind, self.degenerate);
        s.push_str(&format!("columns {}\n", self.column_names.join(",")));
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        s.push_str(&format!("mean {}\nstd {}\n", join(&self.standardizer.mean), join(&self.standardizer.std)));
        match &self.model {
            Model::Constant(l) => s.push_str(&format!("constant {l}\n")),
            Model::Linear { w, b } => s.push_str(&format!("weights {}\nbias {b}\n", join(w))),
            Model::Knn { rows, k, .. } => s.push_str(&format!("k {k}\nreference_rows {}\n", rows.len())),
            Model::Forest(trees) => {
                for (i, t) in trees.iter().enumerate() {
                    s.push_str(&format!("tree {i}\n"));
                    t.dump(&mut s);
                }
            }
            Model::Boost { init, rate, trees } => {
                s.push_str(&format!("init {init}\nrate {rate}\n"));
                for (i, t) in trees.iter().enumerate() {
                    s.push_str(&format!("tree {i}\n"));
                    t.dump(&mut s);
                }
            }
        }
        s
    }
}

pub fn fit_predict(
    kind: ClassifierKind,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    params: &ClassicalParams,
    seed: u64,
) -> Result<Prediction> {
    if train.column_names != test.column_names {
        return Err(Error::InvalidConfig("train and test columns differ".into()));
    }
    fit(kind, train, params, seed)?.predict(test)
}
