use serde::{Deserialize, Serialize};

use crate::tensor::{sigmoid_f64 as sigmoid, PointwiseLoss};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm is taken.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Mse,
    Focal { alpha: f64, gamma: f64 },
}

impl LossKind {
    pub fn focal() -> Self {
        LossKind::Focal { alpha: 0.25, gamma: 2.0 }
    }
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            "focal" => Ok(LossKind::focal()),
            other => Err(crate::Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn inside(p: f64) -> bool {
    (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// Per-example loss of predicted probability `p` against label `y`.
pub fn loss(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => {
            let p = clamp(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
        LossKind::Mse => (p - y) * (p - y),
        LossKind::Focal { alpha, gamma } => {
            let p = clamp(p);
            let positive = y >= 0.5;
            let pt = if positive { p } else { 1.0 - p };
            let at = if positive { alpha } else { 1.0 - alpha };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        }
    }
}

/// Derivative of [`loss`] in `p`; zero where the clamp is active.
pub fn loss_grad(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => {
            if !inside(p) {
                return 0.0;
            }
            -y / p + (1.0 - y) / (1.0 - p)
        }
        LossKind::Mse => 2.0 * (p - y),
        LossKind::Focal { alpha, gamma } => {
            if !inside(p) {
                return 0.0;
            }
            let positive = y >= 0.5;
            let pt = if positive { p } else { 1.0 - p };
            let at = if positive { alpha } else { 1.0 - alpha };
            let modulating = if gamma == 0.0 { 0.0 } else { gamma * (1.0 - pt).powf(gamma - 1.0) * pt.ln() };
            let d_pt = at * (modulating - (1.0 - pt).powf(gamma) / pt);
            if positive {
                d_pt
            } else {
                -d_pt
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss of `sigmoid(z)` computed from the logit, unclamped and stable for
/// any finite `z`.
pub fn loss_logit(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => softplus(z) - y * z,
        LossKind::Mse => loss(kind, sigmoid(z), y),
        LossKind::Focal { alpha, gamma } => {
            let (u, at) = if y >= 0.5 { (z, alpha) } else { (-z, 1.0 - alpha) };
            // ln pt = -softplus(-u), 1 - pt = sigmoid(-u)
            at * sigmoid(-u).powf(gamma) * softplus(-u)
        }
    }
}

/// Derivative of [`loss_logit`] in `z`.
pub fn loss_logit_grad(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => sigmoid(z) - y,
        LossKind::Mse => {
            let p = sigmoid(z);
            2.0 * (p - y) * p * (1.0 - p)
        }
        LossKind::Focal { alpha, gamma } => {
            let (s, at) = if y >= 0.5 { (1.0, alpha) } else { (-1.0, 1.0 - alpha) };
            let u = s * z;
            let (pt, qt) = (sigmoid(u), sigmoid(-u));
            s * at * qt.powf(gamma) * (-gamma * pt * softplus(-u) - qt)
        }
    }
}

impl PointwiseLoss for LossKind {
    fn value(&self, p: f64, y: f64) -> f64 {
        loss(*self, p, y)
    }

    fn grad(&self, p: f64, y: f64) -> f64 {
        loss_grad(*self, p, y)
    }

    fn value_logit(&self, z: f64, y: f64) -> f64 {
        loss_logit(*self, z, y)
    }

    fn grad_logit(&self, z: f64, y: f64) -> f64 {
        loss_logit_grad(*self, z, y)
    }
}
