//! Minimal differentiable network engine.
//!
//! Supports exactly the layer kinds the benchmark architectures need:
//! dense, 1-D valid convolution, ReLU, global max pooling over rows, and
//! a final sigmoid head. Backward rules are hand-written per layer; there
//! is no general autodiff graph. All arithmetic is `f64`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{accuracy, binary_cross_entropy, fit, LabeledSet, LossTerm, TrainConfig};
pub(crate) use train::{accumulate_grads, example_grads, Momentum};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One layer of the stack. Shape parameters are dimensionless counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Affine map on the flattened input: `rows*cols` must equal `input`.
    Dense { input: usize, output: usize },
    /// Valid 1-D convolution along rows; `cols` must equal `in_channels`.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    /// Max over rows per column: `(m, c) -> (1, c)`.
    GlobalMaxPool,
    /// `(1, 1) -> (1, 1)` sigmoid producing the positive-class probability.
    SigmoidHead,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalMaxPool => "global-max-pool",
            LayerSpec::SigmoidHead => "sigmoid-head",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv1d { .. })
    }

    /// Output shape for a given input shape, or an explanation of the
    /// incompatibility.
    fn output_shape(&self, input: (usize, usize)) -> std::result::Result<(usize, usize), String> {
        let (rows, cols) = input;
        match *self {
            LayerSpec::Dense { input, output } => {
                if rows * cols != input {
                    Err(format!(
                        "dense expects {input} flattened inputs, got {rows}x{cols}"
                    ))
                } else {
                    Ok((1, output))
                }
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if cols != in_channels {
                    Err(format!(
                        "conv1d expects {in_channels} channels, got {cols}"
                    ))
                } else if rows < kernel {
                    Err(format!("conv1d kernel {kernel} exceeds {rows} rows"))
                } else {
                    Ok((rows - kernel + 1, out_channels))
                }
            }
            LayerSpec::Relu => Ok((rows, cols)),
            LayerSpec::GlobalMaxPool => Ok((1, cols)),
            LayerSpec::SigmoidHead => {
                if rows * cols != 1 {
                    Err(format!("sigmoid-head expects a scalar, got {rows}x{cols}"))
                } else {
                    Ok((1, 1))
                }
            }
        }
    }
}

/// Weights and bias of one layer; empty vectors for parameter-free kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams {
            weights: Vec::new(),
            bias: Vec::new(),
        }
    }

    pub(crate) fn zeros_like(other: &LayerParams) -> Self {
        LayerParams {
            weights: vec![0.0; other.weights.len()],
            bias: vec![0.0; other.bias.len()],
        }
    }
}

/// Output probability plus every intermediate activation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Positive-class probability.
    pub output: f64,
    /// Per-layer outputs, one entry per layer.
    pub activations: Vec<Matrix>,
}

/// A layer stack with parameters and per-layer freeze flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_rows: usize,
    input_cols: usize,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    frozen: Vec<bool>,
}

impl Model {
    /// Builds a model with seeded uniform init in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn seeded(
        input_rows: usize,
        input_cols: usize,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Model> {
        validate_stack(input_rows, input_cols, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|spec| init_params(spec, &mut rng))
            .collect();
        let frozen = vec![false; layers.len()];
        Ok(Model {
            input_rows,
            input_cols,
            layers,
            params,
            frozen,
        })
    }

    pub fn from_parts(
        input_rows: usize,
        input_cols: usize,
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams>,
        frozen: Vec<bool>,
    ) -> Result<Model> {
        validate_stack(input_rows, input_cols, &layers)?;
        if params.len() != layers.len() || frozen.len() != layers.len() {
            return Err(Error::config("params/frozen length must match layers"));
        }
        for (i, (spec, p)) in layers.iter().zip(&params).enumerate() {
            let (w, b) = param_sizes(spec);
            if p.weights.len() != w || p.bias.len() != b {
                return Err(Error::config(format!(
                    "layer {i} ({}) parameter sizes do not match its spec",
                    spec.name()
                )));
            }
        }
        Ok(Model {
            input_rows,
            input_cols,
            layers,
            params,
            frozen,
        })
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.input_rows, self.input_cols)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, frozen: Vec<bool>) -> Result<()> {
        if frozen.len() != self.layers.len() {
            return Err(Error::config("freeze flags must match layer count"));
        }
        self.frozen = frozen;
        Ok(())
    }

    fn layer_label(&self, index: usize) -> String {
        format!("layer {index} ({})", self.layers[index].name())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.input_rows, self.input_cols) {
            return Err(Error::Shape {
                layer: "input".to_string(),
                msg: format!(
                    "expected {}x{}, got {}x{}",
                    self.input_rows,
                    self.input_cols,
                    x.rows(),
                    x.cols()
                ),
            });
        }
        Ok(())
    }

    /// Full forward pass; pure.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x;
        let mut owned;
        for (i, spec) in self.layers.iter().enumerate() {
            owned = layer_forward(spec, &self.params[i], current).map_err(|msg| Error::Shape {
                layer: self.layer_label(i),
                msg,
            })?;
            activations.push(owned);
            current = activations.last().unwrap();
        }
        let output = activations.last().unwrap().get(0, 0);
        debug_assert!((0.0..=1.0).contains(&output));
        Ok(ForwardTrace { output, activations })
    }

    /// Positive-class probability only.
    pub fn prob(&self, x: &Matrix) -> Result<f64> {
        Ok(self.forward(x)?.output)
    }

    /// Hard label at the fixed 0.5 threshold.
    pub fn predict_label(&self, x: &Matrix) -> Result<u8> {
        Ok(u8::from(self.prob(x)? >= 0.5))
    }

    /// `d f(x) / d x` for the positive-class probability; same shape as `x`.
    pub fn input_gradient(&self, x: &Matrix) -> Result<Matrix> {
        let trace = self.forward(x)?;
        let p = trace.output;
        // Gradient of the probability w.r.t. the sigmoid input.
        let (dx, _) = self.backward_from_head(x, &trace, p * (1.0 - p));
        Ok(dx)
    }

    /// Backpropagates from the sigmoid input (`d_head` is the gradient of
    /// the objective w.r.t. the pre-sigmoid scalar). Returns the input
    /// gradient and per-layer parameter gradients.
    pub(crate) fn backward_from_head(
        &self,
        x: &Matrix,
        trace: &ForwardTrace,
        d_head: f64,
    ) -> (Matrix, Vec<LayerParams>) {
        let n = self.layers.len();
        let mut grads: Vec<LayerParams> = self.params.iter().map(LayerParams::zeros_like).collect();

        // Upstream gradient w.r.t. the output of layer n-2 (the sigmoid input).
        let mut upstream = Matrix::from_vec(1, 1, vec![d_head]);
        for i in (0..n - 1).rev() {
            let input = if i == 0 { x } else { &trace.activations[i - 1] };
            upstream = layer_backward(
                &self.layers[i],
                &self.params[i],
                input,
                &trace.activations[i],
                &upstream,
                &mut grads[i],
            );
        }
        (upstream, grads)
    }

    /// Applies `params -= lr * velocity` style updates; used by the trainers.
    pub(crate) fn apply_update(&mut self, deltas: &[LayerParams]) {
        for (i, delta) in deltas.iter().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let p = &mut self.params[i];
            for (w, d) in p.weights.iter_mut().zip(&delta.weights) {
                *w -= d;
            }
            for (b, d) in p.bias.iter_mut().zip(&delta.bias) {
                *b -= d;
            }
        }
    }
}

fn validate_stack(input_rows: usize, input_cols: usize, layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("model needs at least one layer"));
    }
    let heads = layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::SigmoidHead))
        .count();
    if heads != 1 || !matches!(layers.last(), Some(LayerSpec::SigmoidHead)) {
        return Err(Error::config(
            "model must contain exactly one sigmoid-head, placed last",
        ));
    }
    let mut shape = (input_rows, input_cols);
    for (i, spec) in layers.iter().enumerate() {
        shape = spec.output_shape(shape).map_err(|msg| Error::Shape {
            layer: format!("layer {i} ({})", spec.name()),
            msg,
        })?;
    }
    Ok(())
}

fn param_sizes(spec: &LayerSpec) -> (usize, usize) {
    match *spec {
        LayerSpec::Dense { input, output } => (input * output, output),
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => (out_channels * kernel * in_channels, out_channels),
        _ => (0, 0),
    }
}

fn init_params(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> LayerParams {
    if !spec.has_params() {
        return LayerParams::empty();
    }
    let fan_in = match *spec {
        LayerSpec::Dense { input, .. } => input,
        LayerSpec::Conv1d {
            in_channels, kernel, ..
        } => in_channels * kernel,
        _ => unreachable!(),
    };
    let limit = 1.0 / (fan_in as f64).sqrt();
    let (w, b) = param_sizes(spec);
    LayerParams {
        weights: (0..w).map(|_| rng.random_range(-limit..limit)).collect(),
        bias: vec![0.0; b],
    }
}

fn layer_forward(
    spec: &LayerSpec,
    params: &LayerParams,
    x: &Matrix,
) -> std::result::Result<Matrix, String> {
    let (out_rows, out_cols) = spec.output_shape(x.shape())?;
    let mut out = Matrix::zeros(out_rows, out_cols);
    match *spec {
        LayerSpec::Dense { input, output } => {
            let flat = x.as_slice();
            for o in 0..output {
                let row = &params.weights[o * input..(o + 1) * input];
                let mut z = params.bias[o];
                for (w, &v) in row.iter().zip(flat) {
                    z += w * v;
                }
                out.set(0, o, z);
            }
        }
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            for t in 0..out_rows {
                for o in 0..out_channels {
                    let mut z = params.bias[o];
                    for k in 0..kernel {
                        let xrow = x.row(t + k);
                        let wbase = (o * kernel + k) * in_channels;
                        for c in 0..in_channels {
                            z += params.weights[wbase + c] * xrow[c];
                        }
                    }
                    out.set(t, o, z);
                }
            }
        }
        LayerSpec::Relu => {
            out = x.map(|v| v.max(0.0));
        }
        LayerSpec::GlobalMaxPool => {
            for c in 0..x.cols() {
                let mut best = f64::NEG_INFINITY;
                for r in 0..x.rows() {
                    let v = x.get(r, c);
                    if v > best {
                        best = v;
                    }
                }
                out.set(0, c, best);
            }
        }
        LayerSpec::SigmoidHead => {
            out.set(0, 0, sigmoid(x.get(0, 0)));
        }
    }
    Ok(out)
}

/// Backward rule for one layer: given `d_out` (gradient w.r.t. this
/// layer's output) returns the gradient w.r.t. its input and accumulates
/// parameter gradients into `grad`.
fn layer_backward(
    spec: &LayerSpec,
    params: &LayerParams,
    input: &Matrix,
    output: &Matrix,
    d_out: &Matrix,
    grad: &mut LayerParams,
) -> Matrix {
    match *spec {
        LayerSpec::Dense { input: in_dim, output: out_dim } => {
            let flat = input.as_slice();
            let mut d_in = vec![0.0; in_dim];
            for o in 0..out_dim {
                let dz = d_out.get(0, o);
                grad.bias[o] += dz;
                let row = &params.weights[o * in_dim..(o + 1) * in_dim];
                let grow = &mut grad.weights[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    grow[i] += dz * flat[i];
                    d_in[i] += dz * row[i];
                }
            }
            Matrix::from_vec(input.rows(), input.cols(), d_in)
        }
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let mut d_in = Matrix::zeros(input.rows(), input.cols());
            for t in 0..d_out.rows() {
                for o in 0..out_channels {
                    let dz = d_out.get(t, o);
                    if dz == 0.0 {
                        continue;
                    }
                    grad.bias[o] += dz;
                    for k in 0..kernel {
                        let wbase = (o * kernel + k) * in_channels;
                        let xrow = input.row(t + k);
                        let drow = d_in.row_mut(t + k);
                        for c in 0..in_channels {
                            grad.weights[wbase + c] += dz * xrow[c];
                            drow[c] += dz * params.weights[wbase + c];
                        }
                    }
                }
            }
            d_in
        }
        LayerSpec::Relu => input.zip_map(d_out, |x, d| if x > 0.0 { d } else { 0.0 }),
        LayerSpec::GlobalMaxPool => {
            // Route each column's gradient to the first row attaining the max.
            let mut d_in = Matrix::zeros(input.rows(), input.cols());
            for c in 0..input.cols() {
                let target = output.get(0, c);
                for r in 0..input.rows() {
                    if input.get(r, c) == target {
                        d_in.set(r, c, d_out.get(0, c));
                        break;
                    }
                }
            }
            d_in
        }
        LayerSpec::SigmoidHead => {
            // Handled analytically by the head-gradient callers.
            unreachable!("sigmoid head has no backward pass")
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
