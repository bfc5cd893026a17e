//! CART trees grown on presorted candidate splits; shared by the forest
//! (Gini, class frequency leaves) and boosting (squared error, Newton leaves).

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Criterion {
    Gini,
    SquaredError,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
}

pub(crate) struct GrowSpec<'a> {
    pub criterion: Criterion,
    pub max_depth: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
    /// Per-sample hessians for Newton leaf values; plain means when absent.
    pub hessian: Option<&'a [f64]>,
}

fn impurity(c: Criterion, n: f64, s: f64, ss: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match c {
        // n * Gini for binary targets: n * 2p(1-p).
        Criterion::Gini => {
            let p = s / n;
            n * 2.0 * p * (1.0 - p)
        }
        Criterion::SquaredError => (ss - s * s / n).max(0.0),
    }
}

impl Tree {
    /// Grows on `rows[idx]` against `target`. Adds weighted impurity
    /// decreases into `importance`.
    pub fn grow(x: &[Vec<f64>], target: &[f64], idx: Vec<usize>, spec: &GrowSpec, rng: &mut ChaCha8Rng, importance: &mut [f64]) -> Tree {
        let mut t = Tree { nodes: Vec::new() };
        t.node(x, target, idx, 0, spec, rng, importance);
        t
    }

    fn leaf_value(target: &[f64], idx: &[usize], spec: &GrowSpec) -> f64 {
        let s: f64 = idx.iter().map(|&i| target[i]).sum();
        match spec.hessian {
            Some(h) => {
                let d: f64 = idx.iter().map(|&i| h[i]).sum();
                if d > 1e-12 {
                    s / d
                } else {
                    0.0
                }
            }
            None => s / idx.len().max(1) as f64,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn node(
        &mut self,
        x: &[Vec<f64>],
        target: &[f64],
        idx: Vec<usize>,
        depth: usize,
        spec: &GrowSpec,
        rng: &mut ChaCha8Rng,
        importance: &mut [f64],
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Self::leaf_value(target, &idx, spec)));
        let n = idx.len() as f64;
        let (s, ss) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + target[i], b + target[i] * target[i]));
        let parent = impurity(spec.criterion, n, s, ss);
        if depth >= spec.max_depth || idx.len() < 2 || parent <= 1e-12 {
            return id;
        }
        let d = x[0].len();
        let features: Vec<usize> = match spec.max_features {
            Some(k) if k < d => {
                let mut f = sample(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.clone();
        for &f in &features {
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            let (mut ls, mut lss) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let t = target[order[k]];
                ls += t;
                lss += t * t;
                let (v, next) = (x[order[k]][f], x[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (k + 1) as f64;
                let child = impurity(spec.criterion, nl, ls, lss) + impurity(spec.criterion, n - nl, s - ls, ss - lss);
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (v + next)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        importance[feature] += gain;
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = self.node(x, target, l, depth + 1, spec, rng, importance);
        let right = self.node(x, target, r, depth + 1, spec, rng, importance);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn dump(&self, out: &mut String) {
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Leaf(v) => out.push_str(&format!("  node {i} leaf {v}\n")),
                Node::Split { feature, threshold, left, right } => {
                    out.push_str(&format!("  node {i} split x{feature} <= {threshold} then {left} else {right}\n"))
                }
            }
        }
    }
}
