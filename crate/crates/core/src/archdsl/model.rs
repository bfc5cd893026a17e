use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::notation::{parse_arch, render, LayerSpec};
use crate::error::{Error, Result};
use crate::layers::{self, ConvParams, GateParams, GruParams, LstmParams, RecurrentState};
use crate::tensor::{Activation, Mode, PoolKind, Real, Tape, Tensor, Var};

/// The nine reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelName {
    Mlp,
    Cnn,
    ResNet,
    Rnn,
    Gru,
    Lstm,
    Autoencoder,
    TimeCnn,
    Mcnn,
}

impl ModelName {
    pub const ALL: [ModelName; 9] = [
        ModelName::Mlp,
        ModelName::Cnn,
        ModelName::ResNet,
        ModelName::Rnn,
        ModelName::Gru,
        ModelName::Lstm,
        ModelName::Autoencoder,
        ModelName::TimeCnn,
        ModelName::Mcnn,
    ];

    /// Default architecture, exactly as tabulated in the original notation
    /// (including its unbalanced parentheses).
    pub fn table_notation(self) -> &'static str {
        match self {
            ModelName::Mlp => "FC(32)-FC(64)-FC(64)-FC(128)-FC(1)",
            ModelName::Cnn => "CONV(32)-CONV(64)-CONV(64)-CONV(128)-FC(1)",
            ModelName::ResNet => "CONV(64)- Resblock(CONV(64)-CONV(64)*6-FC(1)",
            ModelName::Rnn => "RNN(32)-RNN(32)-FC(1)",
            ModelName::Gru => "GRU(32)-GRU(32)-FC(1)",
            ModelName::Lstm => "LSTM(32)-LSTM(32)-FC(1)",
            ModelName::Autoencoder => "CONV(64)-CONV(128)-CONV(256)-FC(256)-CONV(256)-CONV(128)-CONV(64)-FC(1)",
            ModelName::TimeCnn => "CONV(6)-CONV(12)-FC(1)",
            ModelName::Mcnn => "(concatenate CNN(32), CNN(64), CNN(128)-FC(64)-FC(1)",
        }
    }

    /// Hyperparameters the notation leaves open.
    pub fn default_options(self) -> BuildOptions {
        let base = BuildOptions::default();
        match self {
            ModelName::TimeCnn => BuildOptions {
                conv_kernel: 7,
                padding: Padding::Valid,
                pool_after_conv: Some(PoolSpec { kind: PoolKind::Avg, size: 3 }),
                ..base
            },
            ModelName::Mcnn => {
                BuildOptions { branch_kernels: vec![5, 7, 9], branch_pool: Some(PoolSpec { kind: PoolKind::Max, size: 2 }), ..base }
            }
            _ => base,
        }
    }

    /// Expands a dash-separated width list (`"32-32-64"`) into full notation
    /// for this model family.
    pub fn expand_widths(self, list: &str) -> Result<String> {
        let widths = list
            .split('-')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Syntax { offset: 0, message: format!("`{list}` is not a width list") })?;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::NonPositiveWidth { offset: 0 });
        }
        let each = |kind: &str| widths.iter().map(|w| format!("{kind}({w})")).collect::<Vec<_>>();
        let mut units = match self {
            ModelName::Mlp => each("FC"),
            ModelName::Cnn => each("CONV"),
            ModelName::Rnn => each("RNN"),
            ModelName::Gru => each("GRU"),
            ModelName::Lstm => each("LSTM"),
            ModelName::ResNet => {
                // Each integer is one residual block; a plain convolution
                // enters every run of equal-width blocks.
                let mut out = Vec::new();
                let mut i = 0;
                while i < widths.len() {
                    let w = widths[i];
                    let run = widths[i..].iter().take_while(|&&v| v == w).count();
                    out.push(format!("CONV({w})"));
                    out.push(format!("Resblock(CONV({w})-CONV({w}))*{run}"));
                    i += run;
                }
                out
            }
            other => {
                return Err(Error::UnsupportedKind(format!("width lists for {other}")));
            }
        };
        units.push("FC(1)".into());
        Ok(units.join("-"))
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelName::Mlp => "MLP",
            ModelName::Cnn => "CNN",
            ModelName::ResNet => "ResNet",
            ModelName::Rnn => "RNN",
            ModelName::Gru => "GRU",
            ModelName::Lstm => "LSTM",
            ModelName::Autoencoder => "Autoencoder",
            ModelName::TimeCnn => "TimeCNN",
            ModelName::Mcnn => "MCNN",
        })
    }
}

impl From<ModelName> for String {
    fn from(m: ModelName) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for ModelName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "mlp" => ModelName::Mlp,
            "cnn" => ModelName::Cnn,
            "resnet" => ModelName::ResNet,
            "rnn" => ModelName::Rnn,
            "gru" => ModelName::Gru,
            "lstm" => ModelName::Lstm,
            "autoencoder" | "ae" => ModelName::Autoencoder,
            "timecnn" => ModelName::TimeCnn,
            "mcnn" | "multichannelcnn" => ModelName::Mcnn,
            _ => return Err(Error::UnknownModel(s.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub size: usize,
}

/// Lowering choices not expressed in the notation itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Kernel for `CONV(n)` units outside concatenate branches.
    pub conv_kernel: usize,
    pub padding: Padding,
    /// Pooling inserted after every top-level convolution.
    pub pool_after_conv: Option<PoolSpec>,
    /// Kernel per concatenate branch, by branch index.
    pub branch_kernels: Vec<usize>,
    /// Pooling closing every concatenate branch.
    pub branch_pool: Option<PoolSpec>,
    /// Dropout ahead of the output layer, at the training rate.
    pub head_dropout: bool,
    /// Initial bias of the LSTM forget gate.
    pub forget_bias: f64,
    /// Every width above one is divided by this (floored, minimum one).
    pub width_divisor: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            conv_kernel: 3,
            padding: Padding::Same,
            pool_after_conv: None,
            branch_kernels: Vec::new(),
            branch_pool: None,
            head_dropout: false,
            forget_bias: 1.0,
            width_divisor: 1,
        }
    }
}

/// Extent of a single sample: time steps by channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub length: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn new(length: usize, channels: usize) -> Self {
        InputShape { length, channels }
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug)]
enum Layer {
    Dense {
        w: usize,
        b: usize,
        act: Option<Activation>,
    },
    Conv {
        w: usize,
        b: usize,
        padding: usize,
    },
    Pool(PoolKind, usize),
    Res {
        first: (usize, usize),
        second: (usize, usize),
    },
    Rnn([usize; 3]),
    Gru([[usize; 3]; 3]),
    Lstm([[usize; 3]; 4]),
    Flatten,
    LastStep,
    Concat(Vec<Vec<Layer>>),
    /// `None` uses the training rate supplied at forward time.
    Dropout(Option<f64>),
    Act(Activation),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Seq { channels: usize, len: usize },
    Steps { width: usize, len: usize },
    Flat(usize),
}

/// Settings for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub seed: u64,
    /// Rate for dropout layers that do not fix their own.
    pub dropout: f64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { mode: Mode::Eval, seed: 0, dropout: 0.0 }
    }
}

enum Flow {
    Seq(Var),
    Steps(Vec<Var>),
    Flat(Var),
}

/// An instantiated architecture: validated layer pipeline plus parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    name: ModelName,
    specs: Vec<LayerSpec>,
    input_shape: InputShape,
    options: BuildOptions,
    seed: u64,
    layers: Vec<Layer>,
    params: Vec<Param>,
}

/// Builds model `name` for `input_shape`, optionally replacing its default
/// architecture with `overrides` (full notation or a width list).
pub fn build_model(name: ModelName, input_shape: InputShape, seed: u64, overrides: Option<&str>) -> Result<ModelGraph> {
    ModelGraph::build(name, input_shape, seed, overrides, name.default_options())
}

fn is_width_list(s: &str) -> bool {
    !s.trim().is_empty() && s.chars().all(|c| c.is_ascii_digit() || c == '-' || c.is_whitespace())
}

fn scale_widths(specs: &mut [LayerSpec], divisor: usize) {
    let scale = |w: &mut usize| {
        if *w > 1 {
            *w = (*w / divisor).max(1);
        }
    };
    for s in specs {
        match s {
            LayerSpec::Dense { width } | LayerSpec::Rnn { width } | LayerSpec::Gru { width } | LayerSpec::Lstm { width } => scale(width),
            LayerSpec::Conv { filters, .. } => scale(filters),
            LayerSpec::ResBlock { inner, .. } => scale_widths(inner, divisor),
            LayerSpec::Concat { branches } => branches.iter_mut().for_each(|b| scale_widths(b, divisor)),
            _ => {}
        }
    }
}

impl ModelGraph {
    pub fn build(name: ModelName, input_shape: InputShape, seed: u64, overrides: Option<&str>, options: BuildOptions) -> Result<Self> {
        if input_shape.length == 0 || input_shape.channels == 0 {
            return Err(Error::ShapeCompose("input shape must be positive".into()));
        }
        if options.width_divisor == 0 {
            return Err(Error::InvalidConfig("width_divisor must be >= 1".into()));
        }
        let text = match overrides {
            Some(s) if is_width_list(s) => name.expand_widths(s)?,
            Some(s) => s.to_string(),
            None => name.table_notation().to_string(),
        };
        let mut specs = parse_arch(&text)?;
        if options.width_divisor > 1 {
            scale_widths(&mut specs, options.width_divisor);
        }
        Self::from_specs(name, specs, input_shape, seed, options)
    }

    pub fn from_specs(name: ModelName, specs: Vec<LayerSpec>, input_shape: InputShape, seed: u64, options: BuildOptions) -> Result<Self> {
        let mut lw = Lowerer { rng: ChaCha8Rng::seed_from_u64(seed), params: Vec::new(), opts: &options };
        let start = Shape::Seq { channels: input_shape.channels, len: input_shape.length };
        let layers = lw.lower_top(&specs, start)?;
        let params = lw.params;
        Ok(ModelGraph { name, specs, input_shape, options, seed, layers, params })
    }

    pub fn name(&self) -> ModelName {
        self.name
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Canonical notation of the (possibly width-scaled) architecture.
    pub fn notation(&self) -> String {
        render(&self.specs)
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn options(&self) -> &BuildOptions {
        &self.options
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf, in declared order.
    pub fn register<T: Real>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.tensor.cast())).collect()
    }

    /// Maps `input: [batch, channels, length]` to probabilities `[batch, 1]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], input: Var, ctx: ForwardCtx) -> Result<Var> {
        self.run(&self.layers, tape, params, input, ctx)
    }

    /// As [`ModelGraph::forward`] but stops before the output sigmoid.
    pub fn forward_logits<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], input: Var, ctx: ForwardCtx) -> Result<Var> {
        let layers = match self.layers.split_last() {
            Some((Layer::Act(Activation::Sigmoid), rest)) => rest,
            _ => &self.layers,
        };
        self.run(layers, tape, params, input, ctx)
    }

    fn run<T: Real>(&self, layers: &[Layer], tape: &mut Tape<T>, params: &[Var], input: Var, ctx: ForwardCtx) -> Result<Var> {
        let s = tape.shape(input);
        let expected = [self.input_shape.channels, self.input_shape.length];
        if s.len() != 3 || s[1..] != expected {
            return Err(Error::ShapeMismatch { op: "model input", left: s.to_vec(), right: expected.to_vec() });
        }
        let mut counter = 0u64;
        match run_chain(layers, tape, params, Flow::Seq(input), ctx, &mut counter)? {
            Flow::Flat(v) => Ok(v),
            _ => Err(Error::ShapeCompose("model did not end in a flat output".into())),
        }
    }

    /// Probabilities for a `[batch, channels, length]` input, evaluation mode.
    pub fn predict(&self, input: Tensor<f32>) -> Result<Vec<f32>> {
        let mut tape = Tape::<f32>::new();
        let params = self.register(&mut tape);
        let x = tape.constant(input);
        let y = self.forward(&mut tape, &params, x, ForwardCtx::eval())?;
        Ok(tape.value(y).data().to_vec())
    }
}

struct Lowerer<'a> {
    rng: ChaCha8Rng,
    params: Vec<Param>,
    opts: &'a BuildOptions,
}

fn needs_sequence(spec: &LayerSpec) -> bool {
    matches!(
        spec,
        LayerSpec::Conv { .. }
            | LayerSpec::ResBlock { .. }
            | LayerSpec::Concat { .. }
            | LayerSpec::Rnn { .. }
            | LayerSpec::Gru { .. }
            | LayerSpec::Lstm { .. }
            | LayerSpec::AvgPool { .. }
            | LayerSpec::MaxPool { .. }
    )
}

impl Lowerer<'_> {
    fn new_param(&mut self, name: String, shape: &[usize], limit: f64) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<f32> =
            if limit == 0.0 { vec![0.0; n] } else { (0..n).map(|_| self.rng.random_range(-limit..limit) as f32).collect() };
        self.params.push(Param { name, tensor: Tensor::new(shape, data).expect("param shape") });
        self.params.len() - 1
    }

    fn bias(&mut self, name: String, n: usize, value: f64) -> usize {
        self.params.push(Param { name, tensor: Tensor::full(&[n], value as f32) });
        self.params.len() - 1
    }

    fn lower_top(&mut self, specs: &[LayerSpec], shape: Shape) -> Result<Vec<Layer>> {
        match specs.last() {
            Some(LayerSpec::Dense { width: 1 }) => {}
            _ => return Err(Error::ShapeCompose("architecture must end in FC(1)".into())),
        }
        let (mut layers, out) = self.lower_chain(specs, shape, None, "", true)?;
        debug_assert_eq!(out, Shape::Flat(1));
        layers.push(Layer::Act(Activation::Sigmoid));
        Ok(layers)
    }

    fn conv(&mut self, name: String, c_in: usize, len: usize, filters: usize, kernel: usize) -> Result<(Layer, Shape)> {
        let padding = match self.opts.padding {
            Padding::Same if kernel % 2 == 0 => {
                return Err(Error::ShapeCompose(format!("{name}: same padding needs an odd kernel, got {kernel}")));
            }
            Padding::Same => kernel / 2,
            Padding::Valid => 0,
        };
        let out_len = crate::tensor::conv_output_len(len, kernel, 1, padding)
            .ok_or_else(|| Error::ShapeCompose(format!("{name}: kernel {kernel} exceeds length {len}")))?;
        let fan_in = (c_in * kernel) as f64;
        let w = self.new_param(format!("{name}.weight"), &[filters, c_in, kernel], (6.0 / fan_in).sqrt());
        let b = self.bias(format!("{name}.bias"), filters, 0.0);
        Ok((Layer::Conv { w, b, padding }, Shape::Seq { channels: filters, len: out_len }))
    }

    fn pool(name: &str, spec: PoolSpec, shape: Shape) -> Result<(Layer, Shape)> {
        match shape {
            Shape::Seq { channels, len } if spec.size >= 1 && len >= spec.size => {
                Ok((Layer::Pool(spec.kind, spec.size), Shape::Seq { channels, len: len / spec.size }))
            }
            other => Err(Error::ShapeCompose(format!("{name}: cannot pool {other:?} by {}", spec.size))),
        }
    }

    fn gate(&mut self, name: String, input: usize, width: usize, bias: f64) -> [usize; 3] {
        let limit = (3.0 / (input + width) as f64).sqrt();
        [
            self.new_param(format!("{name}.input"), &[width, input], limit),
            self.new_param(format!("{name}.recurrent"), &[width, width], limit),
            self.bias(format!("{name}.bias"), width, bias),
        ]
    }

    fn lower_chain(
        &mut self,
        specs: &[LayerSpec],
        mut shape: Shape,
        branch: Option<usize>,
        prefix: &str,
        top: bool,
    ) -> Result<(Vec<Layer>, Shape)> {
        let mut layers = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}{i}");
            let is_last = top && i + 1 == specs.len();
            match spec {
                LayerSpec::Dense { width } => {
                    let trailing = !specs[i + 1..].iter().any(needs_sequence);
                    let width = *width;
                    match shape {
                        Shape::Seq { channels, len } if !trailing => {
                            // Applied independently at every time step.
                            let fan_in = channels as f64;
                            let w = self.new_param(format!("{name}.weight"), &[width, channels, 1], (6.0 / fan_in).sqrt());
                            let b = self.bias(format!("{name}.bias"), width, 0.0);
                            layers.push(Layer::Conv { w, b, padding: 0 });
                            shape = Shape::Seq { channels: width, len };
                            continue;
                        }
                        Shape::Seq { channels, len } => {
                            layers.push(Layer::Flatten);
                            shape = Shape::Flat(channels * len);
                        }
                        Shape::Steps { width: w, .. } if trailing => {
                            layers.push(Layer::LastStep);
                            shape = Shape::Flat(w);
                        }
                        Shape::Steps { .. } => {
                            return Err(Error::ShapeCompose(format!("{name}: FC between recurrent and sequence layers")));
                        }
                        Shape::Flat(_) => {}
                    }
                    let Shape::Flat(n) = shape else { unreachable!() };
                    if is_last && self.opts.head_dropout {
                        layers.push(Layer::Dropout(None));
                    }
                    let (limit, act) =
                        if is_last { ((3.0 / n as f64).sqrt(), None) } else { ((6.0 / n as f64).sqrt(), Some(Activation::Relu)) };
                    let w = self.new_param(format!("{name}.weight"), &[width, n], limit);
                    let b = self.bias(format!("{name}.bias"), width, 0.0);
                    layers.push(Layer::Dense { w, b, act });
                    shape = Shape::Flat(width);
                }
                LayerSpec::Conv { filters, kernel } => {
                    let Shape::Seq { channels, len } = shape else {
                        return Err(Error::ShapeCompose(format!("{name}: CONV needs a sequence input, got {shape:?}")));
                    };
                    let k = match (kernel, branch) {
                        (Some(k), _) => *k,
                        (None, Some(bi)) => self.opts.branch_kernels.get(bi).copied().unwrap_or(self.opts.conv_kernel),
                        (None, None) => self.opts.conv_kernel,
                    };
                    let (layer, s) = self.conv(name.clone(), channels, len, *filters, k)?;
                    layers.push(layer);
                    shape = s;
                    let pool = if branch.is_some() { self.opts.branch_pool } else { self.opts.pool_after_conv };
                    if let Some(p) = pool {
                        let (layer, s) = Self::pool(&name, p, shape)?;
                        layers.push(layer);
                        shape = s;
                    }
                }
                LayerSpec::ResBlock { inner, repeat } => {
                    let (first, second) = match inner.as_slice() {
                        [LayerSpec::Conv { filters: a, kernel: ka }, LayerSpec::Conv { filters: b, kernel: kb }] => {
                            ((*a, ka.unwrap_or(self.opts.conv_kernel)), (*b, kb.unwrap_or(self.opts.conv_kernel)))
                        }
                        _ => {
                            return Err(Error::ShapeCompose(format!("{name}: Resblock must hold exactly two CONV units")));
                        }
                    };
                    for r in 0..*repeat {
                        let Shape::Seq { channels, len } = shape else {
                            return Err(Error::ShapeCompose(format!("{name}: Resblock needs a sequence input")));
                        };
                        if first.1 % 2 == 0 || second.1 % 2 == 0 {
                            return Err(Error::ShapeCompose(format!("{name}: Resblock kernels must be odd")));
                        }
                        if second.0 != channels {
                            return Err(Error::ShapeCompose(format!("{name}: residual add of {} channels onto {channels}", second.0)));
                        }
                        let lim1 = (6.0 / (channels * first.1) as f64).sqrt();
                        let w1 = self.new_param(format!("{name}.{r}.conv1.weight"), &[first.0, channels, first.1], lim1);
                        let b1 = self.bias(format!("{name}.{r}.conv1.bias"), first.0, 0.0);
                        // Residual branches start damped so the stack of additions
                        // keeps activations at the scale of the block input.
                        let lim2 = (6.0 / (first.0 * second.1) as f64).sqrt() / (*repeat as f64).sqrt();
                        let w2 = self.new_param(format!("{name}.{r}.conv2.weight"), &[second.0, first.0, second.1], lim2);
                        let b2 = self.bias(format!("{name}.{r}.conv2.bias"), second.0, 0.0);
                        layers.push(Layer::Res { first: (w1, b1), second: (w2, b2) });
                        shape = Shape::Seq { channels, len };
                    }
                }
                LayerSpec::Rnn { width } | LayerSpec::Gru { width } | LayerSpec::Lstm { width } => {
                    let (input, len) = match shape {
                        Shape::Seq { channels, len } => (channels, len),
                        Shape::Steps { width, len } => (width, len),
                        Shape::Flat(_) => {
                            return Err(Error::ShapeCompose(format!("{name}: recurrent layer needs a sequence")));
                        }
                    };
                    let w = *width;
                    layers.push(match spec {
                        LayerSpec::Rnn { .. } => Layer::Rnn(self.gate(format!("{name}.rnn"), input, w, 0.0)),
                        LayerSpec::Gru { .. } => Layer::Gru([
                            self.gate(format!("{name}.update"), input, w, 0.0),
                            self.gate(format!("{name}.reset"), input, w, 0.0),
                            self.gate(format!("{name}.candidate"), input, w, 0.0),
                        ]),
                        _ => {
                            let fb = self.opts.forget_bias;
                            Layer::Lstm([
                                self.gate(format!("{name}.forget"), input, w, fb),
                                self.gate(format!("{name}.input"), input, w, 0.0),
                                self.gate(format!("{name}.output"), input, w, 0.0),
                                self.gate(format!("{name}.candidate"), input, w, 0.0),
                            ])
                        }
                    });
                    shape = Shape::Steps { width: w, len };
                }
                LayerSpec::AvgPool { size } | LayerSpec::MaxPool { size } => {
                    let kind = if matches!(spec, LayerSpec::AvgPool { .. }) { PoolKind::Avg } else { PoolKind::Max };
                    let (layer, s) = Self::pool(&name, PoolSpec { kind, size: *size }, shape)?;
                    layers.push(layer);
                    shape = s;
                }
                LayerSpec::Flatten => match shape {
                    Shape::Seq { channels, len } => {
                        layers.push(Layer::Flatten);
                        shape = Shape::Flat(channels * len);
                    }
                    Shape::Steps { width, .. } => {
                        layers.push(Layer::LastStep);
                        shape = Shape::Flat(width);
                    }
                    Shape::Flat(_) => {}
                },
                LayerSpec::Concat { branches } => {
                    let mut lowered = Vec::new();
                    let mut shapes = Vec::new();
                    for (bi, b) in branches.iter().enumerate() {
                        let (l, s) = self.lower_chain(b, shape, Some(bi), &format!("{name}.b{bi}."), false)?;
                        lowered.push(l);
                        shapes.push(s);
                    }
                    shape = match shapes.as_slice() {
                        [Shape::Seq { len, .. }, ..] if shapes.iter().all(|s| matches!(s, Shape::Seq { len: l, .. } if l == len)) => {
                            let channels = shapes
                                .iter()
                                .map(|s| match s {
                                    Shape::Seq { channels, .. } => *channels,
                                    _ => 0,
                                })
                                .sum();
                            Shape::Seq { channels, len: *len }
                        }
                        _ if shapes.iter().all(|s| matches!(s, Shape::Flat(_))) => Shape::Flat(
                            shapes
                                .iter()
                                .map(|s| match s {
                                    Shape::Flat(n) => *n,
                                    _ => 0,
                                })
                                .sum(),
                        ),
                        _ => {
                            return Err(Error::ShapeCompose(format!("{name}: branch outputs differ: {shapes:?}")));
                        }
                    };
                    layers.push(Layer::Concat(lowered));
                }
                LayerSpec::Dropout { percent } => layers.push(Layer::Dropout(Some(*percent as f64 / 100.0))),
                LayerSpec::Activation(a) => layers.push(Layer::Act(*a)),
            }
        }
        Ok((layers, shape))
    }
}

fn run_chain<T: Real>(layers: &[Layer], tape: &mut Tape<T>, p: &[Var], mut flow: Flow, ctx: ForwardCtx, counter: &mut u64) -> Result<Flow> {
    for layer in layers {
        flow = match (layer, flow) {
            (Layer::Dense { w, b, act }, Flow::Flat(x)) => Flow::Flat(layers::dense(tape, x, p[*w], p[*b], *act)?),
            (Layer::Conv { w, b, padding }, Flow::Seq(x)) => {
                let y = tape.conv1d(x, p[*w], p[*b], 1, *padding)?;
                Flow::Seq(tape.relu(y))
            }
            (Layer::Pool(kind, size), Flow::Seq(x)) => Flow::Seq(tape.pool1d(x, *kind, *size)?),
            (Layer::Res { first, second }, Flow::Seq(x)) => Flow::Seq(layers::residual_block(
                tape,
                x,
                ConvParams { weight: p[first.0], bias: p[first.1] },
                ConvParams { weight: p[second.0], bias: p[second.1] },
            )?),
            (Layer::Rnn(g), f) => {
                let params = gate_params(p, g);
                let width = tape.shape(params.recurrent)[0];
                Flow::Steps(run_recurrent(tape, f, width, false, |tape, x, s| layers::rnn_step(tape, x, s, params))?)
            }
            (Layer::Gru(g), f) => {
                let params = GruParams { update: gate_params(p, &g[0]), reset: gate_params(p, &g[1]), candidate: gate_params(p, &g[2]) };
                let width = tape.shape(params.update.recurrent)[0];
                Flow::Steps(run_recurrent(tape, f, width, false, |tape, x, s| layers::gru_step(tape, x, s, &params))?)
            }
            (Layer::Lstm(g), f) => {
                let params = LstmParams {
                    forget: gate_params(p, &g[0]),
                    input: gate_params(p, &g[1]),
                    output: gate_params(p, &g[2]),
                    candidate: gate_params(p, &g[3]),
                };
                let width = tape.shape(params.forget.recurrent)[0];
                Flow::Steps(run_recurrent(tape, f, width, true, |tape, x, s| layers::lstm_step(tape, x, s, &params))?)
            }
            (Layer::Flatten, Flow::Seq(x)) => Flow::Flat(tape.flatten(x)?),
            (Layer::LastStep, Flow::Steps(steps)) => Flow::Flat(*steps.last().expect("non-empty sequence")),
            (Layer::Concat(branches), Flow::Seq(x)) => {
                let mut outs = Vec::with_capacity(branches.len());
                for b in branches {
                    outs.push(run_chain(b, tape, p, Flow::Seq(x), ctx, counter)?);
                }
                let (vars, seq): (Vec<Var>, bool) = match outs.first() {
                    Some(Flow::Seq(_)) => (
                        outs.into_iter()
                            .map(|f| match f {
                                Flow::Seq(v) => v,
                                _ => unreachable!("checked at build time"),
                            })
                            .collect(),
                        true,
                    ),
                    _ => (
                        outs.into_iter()
                            .map(|f| match f {
                                Flow::Flat(v) => v,
                                _ => unreachable!("checked at build time"),
                            })
                            .collect(),
                        false,
                    ),
                };
                let joined = tape.concat(&vars, 1)?;
                if seq {
                    Flow::Seq(joined)
                } else {
                    Flow::Flat(joined)
                }
            }
            (Layer::Dropout(rate), f) => {
                *counter += 1;
                let rate = rate.unwrap_or(ctx.dropout);
                let seed = ctx.seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                match f {
                    Flow::Seq(x) => Flow::Seq(tape.dropout(x, rate, ctx.mode, seed)?),
                    Flow::Flat(x) => Flow::Flat(tape.dropout(x, rate, ctx.mode, seed)?),
                    Flow::Steps(s) => Flow::Steps(
                        s.into_iter()
                            .enumerate()
                            .map(|(t, x)| tape.dropout(x, rate, ctx.mode, seed.wrapping_add(t as u64)))
                            .collect::<Result<_>>()?,
                    ),
                }
            }
            (Layer::Act(a), f) => match f {
                Flow::Seq(x) => Flow::Seq(tape.activation(x, *a)),
                Flow::Flat(x) => Flow::Flat(tape.activation(x, *a)),
                Flow::Steps(s) => Flow::Steps(s.into_iter().map(|x| tape.activation(x, *a)).collect()),
            },
            (layer, _) => {
                return Err(Error::ShapeCompose(format!("layer {layer:?} received an incompatible input")));
            }
        };
    }
    Ok(flow)
}

fn gate_params(p: &[Var], g: &[usize; 3]) -> GateParams {
    GateParams { input: p[g[0]], recurrent: p[g[1]], bias: p[g[2]] }
}

fn run_recurrent<T: Real>(
    tape: &mut Tape<T>,
    input: Flow,
    width: usize,
    with_cell: bool,
    mut step: impl FnMut(&mut Tape<T>, Var, RecurrentState) -> Result<RecurrentState>,
) -> Result<Vec<Var>> {
    let xs: Vec<Var> = match input {
        Flow::Seq(x) => {
            let len = tape.shape(x)[2];
            (0..len).map(|t| tape.step(x, t)).collect::<Result<_>>()?
        }
        Flow::Steps(s) => s,
        Flow::Flat(_) => return Err(Error::ShapeCompose("recurrent layer received a flat input".into())),
    };
    let batch = tape.shape(xs[0])[0];
    let mut state = RecurrentState::zeros(tape, batch, width, with_cell);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        state = step(tape, x, state)?;
        out.push(state.hidden);
    }
    Ok(out)
}
