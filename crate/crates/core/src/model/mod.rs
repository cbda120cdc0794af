//! Small fully connected classifiers with exact input gradients.
//!
//! A model is a stack of affine layers with an elementwise activation
//! between them; the last layer emits raw logits. The same type plays both
//! the substitute (white-box) and the victim (black-box) role.

mod persist;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use persist::{load_model, model_from_json, model_to_json, save_model, FORMAT_VERSION};
pub use train::{train, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    /// The ReLU derivative at exactly zero is taken as 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Architecture { input_dim, hidden_dims: Vec::new(), num_classes, activation: Activation::Relu }
    }

    pub fn mlp(input_dim: usize, hidden_dims: &[usize], num_classes: usize, activation: Activation) -> Self {
        Architecture { input_dim, hidden_dims: hidden_dims.to_vec(), num_classes, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be at least 2".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidConfig(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer `z = W a + b`, `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::InvalidInput(format!(
                "dense layer {outputs}x{inputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Dense { inputs, outputs, weights, bias })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    fn affine(&self, a: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|r| {
            let mut acc = self.bias[r];
            for (w, x) in self.row(r).iter().zip(a) {
                acc += w * x;
            }
            acc
        }));
    }

    /// `W^T delta`
    fn backward_input(&self, delta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.inputs];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (gi, w) in g.iter_mut().zip(self.row(r)) {
                *gi += d * w;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub dataset: String,
    pub epochs: usize,
    pub final_train_accuracy: f64,
}

/// A trained (or hand-built) classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<Dense>,
    pub train_seed: u64,
    pub train_meta: TrainMeta,
}

/// A point of the unit cube with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: usize) -> Result<Self> {
        if let Some(i) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!("coordinate {i} = {} lies outside [0,1]", x[i])));
        }
        Ok(LabeledPoint { x, y })
    }
}

/// Activations recorded by a forward pass, needed for backpropagation.
struct Tape {
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations of each hidden layer.
    post: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// Gradients of the loss with respect to every parameter, shaped like the layers.
pub(crate) struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Assembles a model from explicit layers, checking that shapes chain.
    pub fn from_layers(arch: Architecture, layers: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape {
                layer: layers.len().min(shapes.len()),
                message: format!("architecture needs {} layers, got {}", shapes.len(), layers.len()),
            });
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.inputs != *fan_in || layer.outputs != *fan_out {
                return Err(Error::Shape {
                    layer: i,
                    message: format!("expected {fan_out}x{fan_in}, found {}x{}", layer.outputs, layer.inputs),
                });
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::Shape { layer: i, message: "non-finite parameter".into() });
            }
        }
        Ok(ModelParams {
            arch,
            layers,
            train_seed: 0,
            train_meta: TrainMeta { dataset: String::new(), epochs: 0, final_train_accuracy: f64::NAN },
        })
    }

    /// Single affine classifier `logits = W x + b`; `weights` has one row per class.
    pub fn linear(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let classes = weights.len();
        let dim = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged weight matrix".into()));
        }
        let layer = Dense::new(dim, classes, weights.concat(), bias)?;
        ModelParams::from_layers(Architecture::linear(dim, classes), vec![layer])
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::InvalidInput(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input contains a non-finite value".into()));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.arch.num_classes {
            return Err(Error::InvalidInput(format!("label {y} out of range for {} classes", self.arch.num_classes)));
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Tape {
        let act = self.arch.activation;
        let hidden = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden);
        let mut z = Vec::new();
        for layer in &self.layers[..hidden] {
            let input = post.last().map_or(x, Vec::as_slice);
            layer.affine(input, &mut z);
            post.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(std::mem::take(&mut z));
        }
        let mut logits = Vec::new();
        self.layers[hidden].affine(post.last().map_or(x, Vec::as_slice), &mut logits);
        Tape { pre, post, logits }
    }

    /// Raw class scores.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.run(x).logits)
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Softmax cross-entropy of `x` against label `y`.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_input(x)?;
        self.check_label(y)?;
        Ok(cross_entropy(&self.run(x).logits, y))
    }

    /// Exact gradient of [`ModelParams::loss`] with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_label(y)?;
        let tape = self.run(x);
        Ok(self.backward(x, &tape, y, None))
    }

    /// Loss, input gradient and predicted class from a single pass.
    pub fn evaluate(&self, x: &[f64], y: usize) -> Result<Evaluation> {
        self.check_input(x)?;
        self.check_label(y)?;
        let tape = self.run(x);
        let loss = cross_entropy(&tape.logits, y);
        let predicted = argmax(&tape.logits);
        let gradient = self.backward(x, &tape, y, None);
        Ok(Evaluation { loss, predicted, gradient })
    }

    /// Backpropagates the loss; optionally accumulates parameter gradients.
    fn backward(&self, x: &[f64], tape: &Tape, y: usize, mut params: Option<&mut ParamGrads>) -> Vec<f64> {
        let act = self.arch.activation;
        let mut delta = softmax(&tape.logits);
        delta[y] -= 1.0;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(grads) = params.as_deref_mut() {
                let input = if l == 0 { x } else { &tape.post[l - 1] };
                let gw = &mut grads.weights[l];
                for (r, &d) in delta.iter().enumerate() {
                    grads.bias[l][r] += d;
                    if d == 0.0 {
                        continue;
                    }
                    for (g, a) in gw[r * layer.inputs..(r + 1) * layer.inputs].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            let mut upstream = layer.backward_input(&delta);
            if l == 0 {
                return upstream;
            }
            for ((u, &z), &a) in upstream.iter_mut().zip(&tape.pre[l - 1]).zip(&tape.post[l - 1]) {
                *u *= act.derivative(z, a);
            }
            delta = upstream;
        }
        unreachable!("a model has at least one layer")
    }

    pub(crate) fn zero_param_grads(&self) -> ParamGrads {
        ParamGrads {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Adds the parameter gradient at `(x, y)` into `grads`; returns whether
    /// the point was classified correctly.
    pub(crate) fn accumulate_param_grads(&self, x: &[f64], y: usize, grads: &mut ParamGrads) -> bool {
        let tape = self.run(x);
        let correct = argmax(&tape.logits) == y;
        self.backward(x, &tape, y, Some(grads));
        correct
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Fraction of `points` classified correctly.
    pub fn accuracy(&self, points: &[LabeledPoint]) -> Result<f64> {
        if points.is_empty() {
            return Ok(f64::NAN);
        }
        let mut correct = 0usize;
        for p in points {
            if self.predict(&p.x)? == p.y {
                correct += 1;
            }
        }
        Ok(correct as f64 / points.len() as f64)
    }
}

/// Output of [`ModelParams::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub predicted: usize,
    pub gradient: Vec<f64>,
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[y]`, evaluated as `(max - l_y) + ln sum exp(l - max)`
/// so both terms are non-negative.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    (m - logits[y]) + s.ln()
}
