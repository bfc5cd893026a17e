//! Shared oracles for integration tests: central finite differences for
//! gradients, plus small random-data helpers.
#![allow(dead_code)]

use std::sync::Arc;

use cryptostock::archdsl::{ForwardCtx, InputShape, ModelGraph, ModelName};
use cryptostock::layers::{self, ConvParams, GateParams, GruParams, LstmParams, RecurrentState};
use cryptostock::tensor::{Activation, Mode, PoolKind, Tape, Tensor, Var};
use cryptostock::train::LossKind;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradReport {
    pub name: String,
    pub max_rel: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values at least 0.1 away from zero, for checks through a ReLU kink.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// A shuffled ladder with spacing 0.05, so max pooling has no near-ties.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    rand::seq::SliceRandom::shuffle(&mut data[..], rng);
    Tensor::new(shape, data).unwrap()
}

fn projected(tape: &Tape<f64>, out: Var, weights: &[f64]) -> f64 {
    tape.value(out).data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Compares reverse-mode gradients of `<build(inputs), R>` for a fixed random
/// `R` against central differences with step `eps`. At most `per_tensor`
/// entries of each input are probed.
pub fn grad_check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    eps: f64,
    per_tensor: Option<usize>,
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> cryptostock::Result<Var>,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap_or_else(|e| panic!("{name}: {e}"));
    let weights: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let w = tape.constant(Tensor::new(tape.shape(out), weights.clone()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::<f64>::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
        let o = build(&mut t, &vs).unwrap();
        projected(&t, o, &weights)
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.clone();
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let analytic: Vec<f64> = grads.slice(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let idx: Vec<usize> = match per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in idx {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe);
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe);
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            max_rel = max_rel.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    GradReport { name: name.to_string(), max_rel, checked }
}

/// Every differentiable primitive and layer, one report each.
pub fn primitive_reports() -> Vec<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let rng = &mut r;
    let smooth = 1e-3;
    let mut out = Vec::new();
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.0, 1.0);

    out.push(grad_check("matmul", vec![u(rng, &[3, 4]), u(rng, &[4, 2])], smooth, None, &|t, v| t.matmul(v[0], v[1])));
    out.push(grad_check("matmul_t", vec![u(rng, &[3, 4]), u(rng, &[2, 4])], smooth, None, &|t, v| t.matmul_t(v[0], v[1])));
    out.push(grad_check("add", vec![u(rng, &[2, 3]), u(rng, &[2, 3])], smooth, None, &|t, v| t.add(v[0], v[1])));
    out.push(grad_check("sub", vec![u(rng, &[2, 3]), u(rng, &[2, 3])], smooth, None, &|t, v| t.sub(v[0], v[1])));
    out.push(grad_check("mul", vec![u(rng, &[2, 3]), u(rng, &[2, 3])], smooth, None, &|t, v| t.mul(v[0], v[1])));
    out.push(grad_check("add_bias", vec![u(rng, &[3, 4]), u(rng, &[4])], smooth, None, &|t, v| t.add_bias(v[0], v[1])));
    out.push(grad_check("affine", vec![u(rng, &[5])], smooth, None, &|t, v| Ok(t.affine(v[0], -1.5, 0.25))));
    out.push(grad_check("relu", vec![off_zero(rng, &[12])], smooth, None, &|t, v| Ok(t.relu(v[0]))));
    out.push(grad_check("tanh", vec![uniform(rng, &[12], -2.0, 2.0)], smooth, None, &|t, v| Ok(t.tanh(v[0]))));
    out.push(grad_check("sigmoid", vec![uniform(rng, &[12], -4.0, 4.0)], smooth, None, &|t, v| Ok(t.sigmoid(v[0]))));
    for (stride, pad, k, batched) in [(1, 1, 3, true), (2, 0, 3, true), (3, 2, 5, true), (1, 0, 2, false)] {
        let x = if batched { u(rng, &[2, 3, 9]) } else { u(rng, &[3, 9]) };
        out.push(grad_check(
            &format!("conv1d k{k} s{stride} p{pad}"),
            vec![x, u(rng, &[4, 3, k]), u(rng, &[4])],
            smooth,
            None,
            &move |t, v| t.conv1d(v[0], v[1], v[2], stride, pad),
        ));
    }
    for size in [2, 3] {
        out.push(grad_check(&format!("avgpool {size}"), vec![u(rng, &[2, 3, 8])], smooth, None, &move |t, v| {
            t.pool1d(v[0], PoolKind::Avg, size)
        }));
        out.push(grad_check(&format!("maxpool {size}"), vec![distinct(rng, &[2, 3, 8])], smooth, None, &move |t, v| {
            t.pool1d(v[0], PoolKind::Max, size)
        }));
    }
    out.push(grad_check("reshape", vec![u(rng, &[2, 3, 4])], smooth, None, &|t, v| t.reshape(v[0], &[6, 4])));
    out.push(grad_check("flatten", vec![u(rng, &[2, 3, 4])], smooth, None, &|t, v| t.flatten(v[0])));
    for axis in 0..3 {
        out.push(grad_check(&format!("concat axis {axis}"), vec![u(rng, &[2, 3, 4]), u(rng, &[2, 3, 4])], smooth, None, &move |t, v| {
            t.concat(&[v[0], v[1]], axis)
        }));
    }
    out.push(grad_check("step", vec![u(rng, &[2, 3, 5])], smooth, None, &|t, v| {
        let a = t.step(v[0], 0)?;
        let b = t.step(v[0], 4)?;
        t.mul(a, b)
    }));
    out.push(grad_check("dropout", vec![u(rng, &[4, 6])], smooth, None, &|t, v| t.dropout(v[0], 0.3, Mode::Train, 99)));
    out.push(grad_check("sum", vec![u(rng, &[3, 4])], smooth, None, &|t, v| Ok(t.sum(v[0]))));
    out.push(grad_check("mean", vec![u(rng, &[3, 4])], smooth, None, &|t, v| Ok(t.mean(v[0]))));
    let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    for (name, kind) in [("bce", LossKind::Bce), ("mse", LossKind::Mse), ("focal", LossKind::focal())] {
        let y = labels.clone();
        out.push(grad_check(&format!("loss {name}"), vec![uniform(rng, &[6, 1], 0.05, 0.95)], smooth, None, &move |t, v| {
            t.loss(v[0], &y, Arc::new(kind))
        }));
        let y = labels.clone();
        out.push(grad_check(&format!("logit loss {name}"), vec![uniform(rng, &[6, 1], -4.0, 4.0)], smooth, None, &move |t, v| {
            t.logit_loss(v[0], &y, Arc::new(kind))
        }));
    }

    let composite = 1e-6;
    out.push(grad_check("dense tanh", vec![u(rng, &[3, 5]), u(rng, &[4, 5]), u(rng, &[4])], smooth, None, &|t, v| {
        layers::dense(t, v[0], v[1], v[2], Some(Activation::Tanh))
    }));
    out.push(grad_check("dense relu", vec![u(rng, &[3, 5]), u(rng, &[4, 5]), u(rng, &[4])], composite, None, &|t, v| {
        layers::dense(t, v[0], v[1], v[2], Some(Activation::Relu))
    }));
    out.push(grad_check(
        "residual block",
        vec![u(rng, &[2, 3, 7]), u(rng, &[3, 3, 3]), u(rng, &[3]), u(rng, &[3, 3, 3]), u(rng, &[3])],
        composite,
        None,
        &|t, v| {
            let a = ConvParams { weight: v[1], bias: v[2] };
            let b = ConvParams { weight: v[3], bias: v[4] };
            layers::residual_block(t, v[0], a, b)
        },
    ));
    let (b, d, h) = (2, 3, 4);
    let gate = |rng: &mut ChaCha8Rng| vec![u(rng, &[h, d]), u(rng, &[h, h]), u(rng, &[h])];
    let steps = |rng: &mut ChaCha8Rng| vec![u(rng, &[b, d]), u(rng, &[b, d]), u(rng, &[b, d])];
    let gp = |v: &[Var], o: usize| GateParams { input: v[o], recurrent: v[o + 1], bias: v[o + 2] };
    let mut rnn_in = steps(rng);
    rnn_in.extend(gate(rng));
    out.push(grad_check("rnn unroll", rnn_in, smooth, None, &|t, v| {
        let mut s = RecurrentState::zeros(t, b, h, false);
        for &x in &v[..3] {
            s = layers::rnn_step(t, x, s, gp(v, 3))?;
        }
        Ok(s.hidden)
    }));
    let mut gru_in = steps(rng);
    (0..3).for_each(|_| gru_in.extend(gate(rng)));
    out.push(grad_check("gru unroll", gru_in, smooth, None, &|t, v| {
        let p = GruParams { update: gp(v, 3), reset: gp(v, 6), candidate: gp(v, 9) };
        let mut s = RecurrentState::zeros(t, b, h, false);
        for &x in &v[..3] {
            s = layers::gru_step(t, x, s, &p)?;
        }
        Ok(s.hidden)
    }));
    let mut lstm_in = steps(rng);
    (0..4).for_each(|_| lstm_in.extend(gate(rng)));
    out.push(grad_check("lstm unroll", lstm_in, smooth, None, &|t, v| {
        let p = LstmParams { forget: gp(v, 3), input: gp(v, 6), output: gp(v, 9), candidate: gp(v, 12) };
        let mut s = RecurrentState::zeros(t, b, h, true);
        for &x in &v[..3] {
            s = layers::lstm_step(t, x, s, &p)?;
        }
        let c = s.cell.unwrap();
        t.add(s.hidden, c)
    }));
    out
}

/// Small versions of every named architecture on length-32 inputs.
pub fn small_model(name: ModelName, channels: usize, seed: u64) -> ModelGraph {
    let mut opts = name.default_options();
    opts.width_divisor = 8;
    opts.head_dropout = true;
    if name == ModelName::TimeCnn {
        // Kernel 7 with valid padding and pooling by 3 leaves no steps at length 32.
        opts.conv_kernel = 5;
    }
    ModelGraph::build(name, InputShape::new(32, channels), seed, None, opts).unwrap()
}

pub fn model_report(name: ModelName) -> GradReport {
    let channels = 2;
    let model = small_model(name, channels, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.tensor.cast()).collect();
    // Nudge zero biases so no ReLU sits exactly on its kink.
    for (t, p) in inputs.iter_mut().zip(model.params()) {
        if p.name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b += rng.random_range(-0.05..0.05));
        }
    }
    inputs.push(uniform(&mut rng, &[2, channels, 32], -1.0, 1.0));
    let n = model.params().len();
    let ctx = ForwardCtx { mode: Mode::Train, seed: 3, dropout: 0.2 };
    grad_check(&format!("model {name}"), inputs, 1e-5, Some(6), &move |t, v| {
        let p = model.forward(t, &v[..n], v[n], ctx)?;
        t.loss(p, &[1.0, 0.0], Arc::new(LossKind::Bce))
    })
}

pub fn model_reports() -> Vec<GradReport> {
    ModelName::ALL.iter().map(|&m| model_report(m)).collect()
}

/// Direct-sum cross-correlation, the textbook definition.
pub fn naive_conv(x: &[f32], b: usize, ci: usize, l: usize, w: &[f32], co: usize, k: usize, bias: &[f32], s: usize, o: usize) -> Vec<f32> {
    let out_len = (l + 2 * o - k) / s + 1;
    let mut y = vec![0.0f32; b * co * out_len];
    for bi in 0..b {
        for c in 0..co {
            for m in 0..out_len {
                let mut acc = bias[c] as f64;
                for i in 0..ci {
                    for j in 0..k {
                        let pos = (m * s + j) as isize - o as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w[(c * ci + i) * k + j] as f64 * x[(bi * ci + i) * l + pos as usize] as f64;
                        }
                    }
                }
                y[(bi * co + c) * out_len + m] = acc as f32;
            }
        }
    }
    y
}

pub struct ConvReport {
    pub configs: usize,
    pub length_failures: usize,
    pub max_abs: f64,
}

/// Runs `n` random conv configurations against [`naive_conv`].
pub fn conv_report(n: usize, seed: u64) -> ConvReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ConvReport { configs: 0, length_failures: 0, max_abs: 0.0 };
    while rep.configs < n {
        let (b, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (l, k, s, o) = (rng.random_range(1..40), rng.random_range(1..8), rng.random_range(1..4), rng.random_range(0..4));
        if k > l + 2 * o {
            continue;
        }
        rep.configs += 1;
        let x: Vec<f32> = (0..b * ci * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f32> = (0..co * ci * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(Tensor::new(&[b, ci, l], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(&[co, ci, k], w.clone()).unwrap());
        let bv = tape.constant(Tensor::new(&[co], bias.clone()).unwrap());
        let y = tape.conv1d(xv, wv, bv, s, o).unwrap();
        let expected_len = ((l + 2 * o - k) as f64 / s as f64).floor() as usize + 1;
        if tape.shape(y) != [b, co, expected_len] {
            rep.length_failures += 1;
            continue;
        }
        let oracle = naive_conv(&x, b, ci, l, &w, co, k, &bias, s, o);
        for (a, e) in tape.value(y).data().iter().zip(&oracle) {
            rep.max_abs = rep.max_abs.max((a - e).abs() as f64);
        }
    }
    rep
}

/// Direct-definition feature oracle, written without sharing code with the
/// library: textbook moments, explicit bin membership, explicit sign pairs.
pub fn naive_features(x: &[f64]) -> [f64; 17] {
    let n = x.len();
    let nf = n as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= nf;
    let moment = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / nf;
    let var = moment(2);
    let flat = var.sqrt() <= 1e-12 * mean.abs().max(1.0);
    let skew = if flat { 0.0 } else { moment(3) / var.sqrt().powi(3) };
    let kurt = if flat { 0.0 } else { moment(4) / (var * var) - 3.0 };
    let ac = |k: usize| {
        if flat {
            return 0.0;
        }
        let mut num = 0.0;
        for t in k..n {
            num += (x[t] - mean) * (x[t - k] - mean);
        }
        num / (var * nf)
    };
    let mut max = x[0];
    let mut min = x[0];
    for &v in x {
        if v > max {
            max = v;
        }
        if v < min {
            min = v;
        }
    }
    let mean_diff = (x[n - 1] - x[0]) / (nf - 1.0);
    let mut abs_diff = 0.0;
    for t in 1..n {
        abs_diff += (x[t] - x[t - 1]).abs();
    }
    let auc = x.iter().sum::<f64>() - 0.5 * (x[0] + x[n - 1]);
    let entropy = if max == min {
        0.0
    } else {
        let w = (max - min) / 10.0;
        let mut h = 0.0;
        for b in 0..10 {
            let lo = min + b as f64 * w;
            let hi = min + (b + 1) as f64 * w;
            let c = x.iter().filter(|&&v| v >= lo && (v < hi || (b == 9 && v <= max))).count();
            if c > 0 {
                let p = c as f64 / nf;
                h -= p * p.ln();
            }
        }
        h
    };
    let mut hi_peaks = 0;
    let mut lo_peaks = 0;
    for t in 1..n - 1 {
        if x[t - 1] < x[t] && x[t + 1] < x[t] {
            hi_peaks += 1;
        }
        if x[t - 1] > x[t] && x[t + 1] > x[t] {
            lo_peaks += 1;
        }
    }
    let signs: Vec<f64> = x.iter().filter(|v| **v != 0.0).map(|v| v.signum()).collect();
    let crossings = signs.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    [
        mean,
        var,
        max,
        min,
        kurt,
        skew,
        ac(1),
        ac(2),
        ac(3),
        mean_diff,
        abs_diff / (nf - 1.0),
        max - min,
        auc,
        entropy,
        hi_peaks as f64,
        lo_peaks as f64,
        crossings as f64,
    ]
}

pub struct FeatureReport {
    pub series: usize,
    /// Largest `|lib - oracle| / max(1, |oracle|)` over all fields.
    pub max_err: f64,
    pub worst_field: &'static str,
    pub invariance_failures: Vec<String>,
}

fn random_series(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(4..400);
    match rng.random_range(0..4) {
        // Random walk at price level.
        0 => {
            let mut p = rng.random_range(10.0..1000.0);
            (0..n)
                .map(|_| {
                    p *= 1.0 + rng.random_range(-0.01..0.01);
                    p
                })
                .collect()
        }
        // Noise around zero, crossings likely.
        1 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        // Coarse integers: ties, plateaus and exact zeros.
        2 => (0..n).map(|_| rng.random_range(-3i32..4) as f64).collect(),
        _ => {
            let c = rng.random_range(-5.0..5.0);
            if rng.random::<bool>() {
                vec![c; n]
            } else {
                (0..n).map(|t| c + (t as f64 * 0.3).sin()).collect()
            }
        }
    }
}

pub fn feature_report(n: usize, seed: u64) -> FeatureReport {
    use cryptostock::features::{extract_features, FEATURE_NAMES};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = FeatureReport { series: 0, max_err: 0.0, worst_field: "", invariance_failures: Vec::new() };
    for _ in 0..n {
        let x = random_series(&mut rng);
        let got = extract_features(&x).unwrap().to_array();
        let want = naive_features(&x);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            let e = (g - w).abs() / w.abs().max(1.0);
            if e > rep.max_err || e.is_nan() {
                rep.max_err = if e.is_nan() { f64::INFINITY } else { e };
                rep.worst_field = FEATURE_NAMES[i];
            }
        }
        let scale = rng.random_range(0.1..50.0);
        let shift = rng.random_range(-100.0..100.0);
        let scaled = extract_features(&x.iter().map(|v| v * scale).collect::<Vec<_>>()).unwrap().to_array();
        let shifted = extract_features(&x.iter().map(|v| v + shift).collect::<Vec<_>>()).unwrap().to_array();
        // autocorr_1..3, skewness, kurtosis under positive scaling.
        for i in [4, 5, 6, 7, 8] {
            if (scaled[i] - got[i]).abs() > 1e-9 {
                rep.invariance_failures.push(format!("scale {} by {scale}: {} vs {}", FEATURE_NAMES[i], scaled[i], got[i]));
            }
        }
        for i in [14, 15] {
            if shifted[i] != got[i] {
                rep.invariance_failures.push(format!("shift {} by {shift}", FEATURE_NAMES[i]));
            }
        }
        if got[11] != got[2] - got[3] {
            rep.invariance_failures.push("peak_to_peak != max - min".into());
        }
        rep.series += 1;
    }
    rep
}
