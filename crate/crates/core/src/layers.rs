//! Composite layers on the gradient tape: dense, residual block and the three
//! recurrent cells.
//!
//! Weight matrices are stored `[out, in]` and applied as `x W^T`, so a batch
//! of row vectors `[batch, in]` maps to `[batch, out]`.

use crate::error::{Error, Result};
use crate::tensor::{Activation, Real, Tape, Var};

/// `act(x W^T + bias)`.
pub fn dense<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, bias: Var, act: Option<Activation>) -> Result<Var> {
    let xw = tape.matmul_t(x, w)?;
    let y = tape.add_bias(xw, bias)?;
    Ok(match act {
        Some(a) => tape.activation(y, a),
        None => y,
    })
}

/// Weights of one convolution inside a residual block.
#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub weight: Var,
    pub bias: Var,
}

/// Same-padded `ReLU(conv(x))`; the kernel must be odd.
pub fn conv_relu_same<T: Real>(tape: &mut Tape<T>, x: Var, p: ConvParams) -> Result<Var> {
    let k = tape.shape(p.weight)[2];
    if k % 2 == 0 {
        return Err(Error::ShapeCompose(format!("same padding needs an odd kernel, got {k}")));
    }
    let y = tape.conv1d(x, p.weight, p.bias, 1, k / 2)?;
    Ok(tape.relu(y))
}

/// `h1 = ReLU(conv(x))`, `h2 = ReLU(conv(h1))`, output `ReLU(h2 + x)`.
pub fn residual_block<T: Real>(tape: &mut Tape<T>, x: Var, first: ConvParams, second: ConvParams) -> Result<Var> {
    let h1 = conv_relu_same(tape, x, first)?;
    let h2 = conv_relu_same(tape, h1, second)?;
    let sum = tape.add(h2, x)?;
    Ok(tape.relu(sum))
}

/// Hidden (and, for LSTM, cell) state carried between time steps.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub hidden: Var,
    pub cell: Option<Var>,
}

impl RecurrentState {
    /// All-zero initial state for `batch` rows of `width` units.
    pub fn zeros<T: Real>(tape: &mut Tape<T>, batch: usize, width: usize, with_cell: bool) -> Self {
        let hidden = tape.constant(crate::tensor::Tensor::zeros(&[batch, width]));
        let cell = with_cell.then(|| tape.constant(crate::tensor::Tensor::zeros(&[batch, width])));
        RecurrentState { hidden, cell }
    }
}

/// Input, recurrent and bias parameters of one gate.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

fn gate<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, p: GateParams, act: Activation) -> Result<Var> {
    let a = tape.matmul_t(x, p.input)?;
    let b = tape.matmul_t(h, p.recurrent)?;
    let s = tape.add(a, b)?;
    let s = tape.add_bias(s, p.bias)?;
    Ok(tape.activation(s, act))
}

/// `h_t = tanh(W_x x_t + W_h h_{t-1} + b)`.
pub fn rnn_step<T: Real>(tape: &mut Tape<T>, x: Var, state: RecurrentState, p: GateParams) -> Result<RecurrentState> {
    let hidden = gate(tape, x, state.hidden, p, Activation::Tanh)?;
    Ok(RecurrentState { hidden, cell: None })
}

#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
}

/// Gated recurrent unit:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * h + z * n
/// ```
pub fn gru_step<T: Real>(tape: &mut Tape<T>, x: Var, state: RecurrentState, p: &GruParams) -> Result<RecurrentState> {
    let h = state.hidden;
    let z = gate(tape, x, h, p.update, Activation::Sigmoid)?;
    let r = gate(tape, x, h, p.reset, Activation::Sigmoid)?;
    let rh = tape.mul(r, h)?;
    let n = gate(tape, x, rh, p.candidate, Activation::Tanh)?;
    let keep = tape.affine(z, -T::one(), T::one());
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, n)?;
    let hidden = tape.add(old, new)?;
    Ok(RecurrentState { hidden, cell: None })
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

/// Long short-term memory cell: `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_step<T: Real>(tape: &mut Tape<T>, x: Var, state: RecurrentState, p: &LstmParams) -> Result<RecurrentState> {
    let h = state.hidden;
    let c = state.cell.ok_or_else(|| Error::ShapeCompose("LSTM step needs a cell state".into()))?;
    let f = gate(tape, x, h, p.forget, Activation::Sigmoid)?;
    let i = gate(tape, x, h, p.input, Activation::Sigmoid)?;
    let o = gate(tape, x, h, p.output, Activation::Sigmoid)?;
    let g = gate(tape, x, h, p.candidate, Activation::Tanh)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let cell = tape.add(fc, ig)?;
    let tc = tape.tanh(cell);
    let hidden = tape.mul(o, tc)?;
    Ok(RecurrentState { hidden, cell: Some(cell) })
}
