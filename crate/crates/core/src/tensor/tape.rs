use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::{conv_output_len, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Elementwise loss `l(p, y)` with its derivative in `p`, averaged by the
/// tape's loss node.
pub trait PointwiseLoss: Send + Sync {
    fn value(&self, p: f64, y: f64) -> f64;
    fn grad(&self, p: f64, y: f64) -> f64;

    /// Loss of the probability `sigmoid(z)`.
    fn value_logit(&self, z: f64, y: f64) -> f64 {
        self.value(sigmoid_f64(z), y)
    }

    /// Derivative of [`PointwiseLoss::value_logit`] in `z`.
    fn grad_logit(&self, z: f64, y: f64) -> f64 {
        let p = sigmoid_f64(z);
        self.grad(p, y) * p * (1.0 - p)
    }
}

pub(crate) fn sigmoid_f64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, T),
    Act(Var, Activation),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Pool { x: Var, kind: PoolKind, size: usize, argmax: Vec<usize> },
    Reshape(Var),
    Concat { inputs: Vec<Var>, outer: usize, inners: Vec<usize> },
    Step { x: Var, t: usize },
    Dropout { x: Var, mask: Vec<T> },
    Sum(Var),
    Mean(Var),
    Loss { p: Var, target: Vec<f64>, loss: Arc<dyn PointwiseLoss> },
    LogitLoss { z: Var, target: Vec<f64>, loss: Arc<dyn PointwiseLoss> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Inputs of a node always precede it, so the node list is already in
/// topological order and [`Tape::backward`] is a single reverse sweep.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads.get(v.0)?.as_ref().map(|g| Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Raw gradient buffer, `None` if the value did not influence the loss.
    pub fn slice(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Number of nodes the reverse sweep touched.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

/// Views a `[c, l]` or `[b, c, l]` shape as `(b, c, l)`.
fn as_bcl(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, l] => Some((1, c, l)),
        [b, c, l] => Some((b, c, l)),
        _ => None,
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a constant leaf (no gradient is tracked).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(mismatch("matmul", sa, sb));
        };
        if k != k2 {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    /// `[m, k] x [n, k]^T -> [m, n]`, the dense-layer product `x W^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[m, k], &[n, k2]) = (sa, sb) else {
            return Err(mismatch("matmul_t", sa, sb));
        };
        if k != k2 {
            return Err(mismatch("matmul_t", sa, sb));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, T::zero(), &mut out);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulT(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape: ta.shape().to_vec(), data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a `[n]` bias to every row of a `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let (&[_, n], &[n2]) = (sx, sb) else {
            return Err(mismatch("add_bias", sx, sb));
        };
        if n != n2 {
            return Err(mismatch("add_bias", sx, sb));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let t = Tensor { shape: sx.to_vec(), data };
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let src = self.value(x);
        let t = Tensor { shape: src.shape().to_vec(), data: src.data().iter().map(|&v| scale * v + shift).collect() };
        let rg = self.requires(x);
        self.push(t, Op::Affine(x, scale), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let src = self.value(x);
        let f: fn(T) -> T = match kind {
            Activation::Relu => |v| if v > T::zero() { v } else { T::zero() },
            Activation::Tanh => |v| v.tanh(),
            Activation::Sigmoid => sigmoid,
        };
        let t = Tensor { shape: src.shape().to_vec(), data: src.data().iter().map(|&v| f(v)).collect() };
        let rg = self.requires(x);
        self.push(t, Op::Act(x, kind), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Cross-correlation of `x: [c_in, l]` or `[b, c_in, l]` with
    /// `w: [c_out, c_in, k]` plus bias `[c_out]`, zero padded by `padding`
    /// on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, c_in, len) = as_bcl(&sx).ok_or_else(|| mismatch("conv1d", &sx, &sw))?;
        let &[c_out, c_in_w, kernel] = sw.as_slice() else {
            return Err(mismatch("conv1d", &sx, &sw));
        };
        if c_in != c_in_w || sb != [c_out] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(Error::ShapeCompose("conv1d stride must be >= 1".into()));
        }
        let out_len =
            conv_output_len(len, kernel, stride, padding).ok_or(Error::KernelLargerThanInput { kernel, padded: len + 2 * padding })?;
        let geom = ConvGeom { batch, c_in, len, c_out, kernel, stride, padding, out_len };
        let data = kernels::conv_forward(geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = if sx.len() == 2 { vec![c_out, out_len] } else { vec![batch, c_out, out_len] };
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(Tensor { shape, data }, Op::Conv { x, w, b, geom }, rg))
    }

    /// Non-overlapping pooling along the last axis; a trailing partial
    /// window is dropped.
    pub fn pool1d(&mut self, x: Var, kind: PoolKind, size: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, c, len) = as_bcl(&sx).ok_or_else(|| mismatch("pool1d", &sx, &[size]))?;
        if size == 0 || len < size {
            return Err(Error::ShapeCompose(format!("pool size {size} over length {len}")));
        }
        let out_len = len / size;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * c * out_len);
        let mut argmax = Vec::new();
        for row in src.chunks(len) {
            for win in 0..out_len {
                let start = win * size;
                let w = &row[start..start + size];
                match kind {
                    PoolKind::Avg => {
                        let s: f64 = w.iter().map(|v| v.as_f64()).sum();
                        data.push(T::from_f64(s / size as f64));
                    }
                    PoolKind::Max => {
                        let mut best = 0;
                        for (i, &v) in w.iter().enumerate() {
                            if v > w[best] {
                                best = i;
                            }
                        }
                        argmax.push(start + best);
                        data.push(w[best]);
                    }
                }
            }
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = out_len;
        let rg = self.requires(x);
        Ok(self.push(Tensor { shape, data }, Op::Pool { x, kind, size, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.requires(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Flattens everything after the leading (batch) axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| Error::ShapeCompose("empty concat".into()))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat", &first, &[axis]));
        }
        let outer: usize = first[..axis].iter().product();
        let mut inners = Vec::with_capacity(inputs.len());
        let mut total_axis = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(mismatch("concat", &first, s));
            }
            total_axis += s[axis];
            inners.push(s[axis..].iter().product::<usize>());
        }
        let mut data = Vec::with_capacity(outer * inners.iter().sum::<usize>());
        for o in 0..outer {
            for (&v, &inner) in inputs.iter().zip(&inners) {
                data.extend_from_slice(&self.value(v).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total_axis;
        let rg = inputs.iter().any(|&v| self.requires(v));
        Ok(self.push(Tensor { shape, data }, Op::Concat { inputs: inputs.to_vec(), outer, inners }, rg))
    }

    /// Column `t` of a `[b, c, l]` sequence as a `[b, c]` matrix.
    pub fn step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let &[b, c, l] = s.as_slice() else {
            return Err(mismatch("step", &s, &[t]));
        };
        if t >= l {
            return Err(mismatch("step", &s, &[t]));
        }
        let src = self.value(x).data();
        let data = (0..b * c).map(|row| src[row * l + t]).collect();
        let rg = self.requires(x);
        Ok(self.push(Tensor { shape: vec![b, c], data }, Op::Step { x, t }, rg))
    }

    /// Inverted dropout: in [`Mode::Train`] each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let src = self.value(x);
        let mask: Vec<T> = (0..src.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let t = Tensor { shape: src.shape().to_vec(), data: src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect() };
        let rg = self.requires(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.len() as f64;
        let rg = self.requires(x);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), rg)
    }

    /// Mean of `loss(p_i, y_i)` over all elements of `p`.
    pub fn loss(&mut self, p: Var, target: &[f64], loss: Arc<dyn PointwiseLoss>) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != target.len() {
            return Err(mismatch("loss", pv.shape(), &[target.len()]));
        }
        let total: f64 = pv.data().iter().zip(target).map(|(&pi, &yi)| loss.value(pi.as_f64(), yi)).sum();
        let value = Tensor::scalar(T::from_f64(total / target.len() as f64));
        let rg = self.requires(p);
        Ok(self.push(value, Op::Loss { p, target: target.to_vec(), loss }, rg))
    }

    /// Mean of `loss(sigmoid(z_i), y_i)`, differentiated in `z` directly so
    /// saturated logits keep a usable gradient.
    pub fn logit_loss(&mut self, z: Var, target: &[f64], loss: Arc<dyn PointwiseLoss>) -> Result<Var> {
        let zv = self.value(z);
        if zv.len() != target.len() {
            return Err(mismatch("logit_loss", zv.shape(), &[target.len()]));
        }
        let total: f64 = zv.data().iter().zip(target).map(|(&zi, &yi)| loss.value_logit(zi.as_f64(), yi)).sum();
        let value = Tensor::scalar(T::from_f64(total / target.len() as f64));
        let rg = self.requires(z);
        Ok(self.push(value, Op::LogitLoss { z, target: target.to_vec(), loss }, rg))
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients additively
    /// across fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(), visited })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |da| kernels::gemm(m, n, k, g, false, tb.data(), true, T::one(), da));
                acc(*b, &mut |db| kernels::gemm(k, m, n, ta.data(), true, g, false, T::one(), db));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                // C = A B^T: dA = G B, dB = G^T A
                acc(*a, &mut |da| kernels::gemm(m, n, k, g, false, tb.data(), false, T::one(), da));
                acc(*b, &mut |db| kernels::gemm(n, m, k, g, true, ta.data(), false, T::one(), db));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(tb) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(ta) {
                        *d += g * x;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                acc(*x, &mut |d| add_into(d, g));
                let n = self.value(*bias).len();
                acc(*bias, &mut |d| {
                    let mut sums = vec![0.0f64; n];
                    for row in g.chunks(n) {
                        for (s, &v) in sums.iter_mut().zip(row) {
                            *s += v.as_f64();
                        }
                    }
                    for (d, s) in d.iter_mut().zip(sums) {
                        *d += T::from_f64(s);
                    }
                });
            }
            Op::Affine(x, scale) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += *scale * g)),
            Op::Act(x, kind) => {
                let y = node.value.data();
                let src = self.value(*x).data();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        let local = match kind {
                            Activation::Relu => {
                                if src[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Tanh => T::one() - y[i] * y[i],
                            Activation::Sigmoid => y[i] * (T::one() - y[i]),
                        };
                        d[i] += g[i] * local;
                    }
                });
            }
            Op::Conv { x, w, b, geom } => {
                let (xs, ws) = (self.value(*x).data(), self.value(*w).data());
                let (rx, rw, rb) = (self.requires(*x), self.requires(*w), self.requires(*b));
                let mut dx = rx.then(|| grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xs.len()]));
                let mut dw = rw.then(|| grads[w.0].take().unwrap_or_else(|| vec![T::zero(); ws.len()]));
                let mut db = rb.then(|| grads[b.0].take().unwrap_or_else(|| vec![T::zero(); geom.c_out]));
                kernels::conv_backward(*geom, xs, ws, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
                if let Some(db) = db {
                    grads[b.0] = Some(db);
                }
            }
            Op::Pool { x, kind, size, argmax } => {
                let len = *self.value(*x).shape().last().unwrap();
                let out_len = len / size;
                acc(*x, &mut |d| match kind {
                    PoolKind::Avg => {
                        let scale = T::from_f64(1.0 / *size as f64);
                        for (row, grow) in d.chunks_mut(len).zip(g.chunks(out_len)) {
                            for (win, &gv) in grow.iter().enumerate() {
                                for v in &mut row[win * size..(win + 1) * size] {
                                    *v += gv * scale;
                                }
                            }
                        }
                    }
                    PoolKind::Max => {
                        for (r, (row, grow)) in d.chunks_mut(len).zip(g.chunks(out_len)).enumerate() {
                            for (win, &gv) in grow.iter().enumerate() {
                                row[argmax[r * out_len + win]] += gv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| add_into(d, g)),
            Op::Concat { inputs, outer, inners } => {
                let total: usize = inners.iter().sum();
                let mut offset = 0;
                for (&v, &inner) in inputs.iter().zip(inners) {
                    acc(v, &mut |d| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + inner];
                            add_into(&mut d[o * inner..(o + 1) * inner], src);
                        }
                    });
                    offset += inner;
                }
            }
            Op::Step { x, t } => {
                let l = self.value(*x).shape()[2];
                acc(*x, &mut |d| {
                    for (row, &gv) in g.iter().enumerate() {
                        d[row * l + t] += gv;
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |d| {
                for ((d, &g), &m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }),
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = T::from_f64(self.value(*x).len() as f64);
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Loss { p, target, loss } => {
                let pv = self.value(*p).data();
                let scale = g[0].as_f64() / target.len() as f64;
                acc(*p, &mut |d| {
                    for ((d, &pi), &yi) in d.iter_mut().zip(pv).zip(target) {
                        *d += T::from_f64(scale * loss.grad(pi.as_f64(), yi));
                    }
                });
            }
            Op::LogitLoss { z, target, loss } => {
                let zv = self.value(*z).data();
                let scale = g[0].as_f64() / target.len() as f64;
                acc(*z, &mut |d| {
                    for ((d, &zi), &yi) in d.iter_mut().zip(zv).zip(target) {
                        *d += T::from_f64(scale * loss.grad_logit(zi.as_f64(), yi));
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_hand_cases() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let id = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, id).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let y = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0]);
        assert!(matches!(tape.matmul(r, r), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_hand_case_and_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv1d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[-3.0]);
        let w5 = tape.constant(Tensor::zeros(&[1, 1, 5]));
        assert!(matches!(tape.conv1d(x, w5, b, 1, 0), Err(Error::KernelLargerThanInput { .. })));
        let x391 = tape.constant(Tensor::zeros(&[1, 391]));
        let w3 = tape.constant(Tensor::zeros(&[1, 1, 3]));
        let y = tape.conv1d(x391, w3, b, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 391]);
    }

    #[test]
    fn pooling_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.pool1d(x, PoolKind::Avg, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 5.0]);
        let x = tape.constant(t(&[1, 4], &[1.0, 3.0, 2.0, 2.0]));
        let y = tape.pool1d(x, PoolKind::Max, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
        let x = tape.constant(Tensor::zeros(&[1, 7]));
        let y = tape.pool1d(x, PoolKind::Avg, 3).unwrap();
        assert_eq!(tape.shape(y), &[1, 2]);
    }

    #[test]
    fn activation_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        let th = tape.tanh(z);
        let sg = tape.sigmoid(z);
        assert_eq!(tape.value(th).item(), 0.0);
        assert_eq!(tape.value(sg).item(), 0.5);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[100], 1.0));
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.2, Mode::Eval, 1).unwrap(), x);
        assert!(tape.dropout(x, 1.0, Mode::Train, 1).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let mut tape = Tape::<f32>::new();
        let n = 100_000;
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let y = tape.dropout(x, 0.2, Mode::Train, 42).unwrap();
        let d = tape.value(y).data();
        let zeros = d.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!((zeros - 0.2).abs() < 0.01, "zero fraction {zeros}");
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // loss = sum(W x) with W [2,3] trainable, x fixed.
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let x = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.slice(w).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(g.slice(x).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[3.0]));
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.slice(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn chain_visits_every_node_once() {
        let mut tape = Tape::<f64>::new();
        let mut v = tape.param(t(&[3], &[0.1, 0.2, 0.3]));
        for _ in 0..50 {
            v = tape.tanh(v);
        }
        let loss = tape.sum(v);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.visited(), tape.len());
    }

    #[test]
    fn concat_and_step_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = tape.mul(c, w).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.slice(a).unwrap(), &[1.0, 4.0]);
        assert_eq!(g.slice(b).unwrap(), &[2.0, 3.0, 5.0, 6.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = tape.step(x, 1).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 5.0]);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.slice(x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
