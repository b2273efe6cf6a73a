//! Feed-forward softmax classifier.
//!
//! Layer `l` maps its input `A` (B × d_in) to `Z = A Wᵀ + b` (B × d_out).
//! Hidden layers apply the configured activation; the last layer is a
//! softmax trained with mean cross-entropy.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("expected `sigmoid` or `tanh`, got `{other}`")),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights (d_out × d_in) and bias (d_out) of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        LayerParams {
            weights: Matrix::zeros(d_out, d_in),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerParams>,
}

/// Per-layer gradients of the mean loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradientSet {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.d_out(), l.d_in()))
                .collect(),
        }
    }

    /// Flattens in the same canonical order as [`MlpModel::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Activations recorded by a forward pass over one minibatch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre_activations: Vec<Matrix>,
    /// Post-activation outputs; the last entry holds softmax probabilities.
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.activations.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// The matrix fed into layer `l`.
    pub fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.activations[l - 1]
        }
    }

    pub fn probabilities(&self) -> &Matrix {
        self.activations
            .last()
            .expect("trace has at least one layer")
    }
}

/// Gradients together with the per-example loss derivatives with respect to
/// each layer's pre-activations (B × d_out), which the natural-gradient
/// statistics consume.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: GradientSet,
    pub deltas: Vec<Matrix>,
}

/// Flat copy of every parameter: layer 0 weights (row-major), layer 0 bias,
/// layer 1 weights, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    let total = layers
        .iter()
        .map(|l| l.weights.as_slice().len() + l.bias.len())
        .sum();
    let mut out = Vec::with_capacity(total);
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a network needs at least an input and an output size, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| LayerParams::zeros(w[1], w[0]))
            .collect();
        Ok(MlpModel {
            layer_dims: dims.to_vec(),
            activation,
            layers,
        })
    }

    /// Glorot-uniform weights, `U(-r, r)` with `r = √(6 / (d_in + d_out))`,
    /// and zero biases.
    pub fn init_random(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut model = MlpModel::zeros(dims, activation)?;
        for layer in &mut model.layers {
            glorot_fill(&mut layer.weights, rng);
        }
        Ok(model)
    }

    /// Assembles a model from explicit layers, checking that they chain.
    pub fn from_layers(activation: Activation, layers: Vec<LayerParams>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("a model needs at least one layer".into()))?;
        let mut dims = vec![first.d_in()];
        for (i, l) in layers.iter().enumerate() {
            if l.d_in() != *dims.last().unwrap() || l.bias.len() != l.d_out() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} has shape {:?} with bias {}, expected input {}",
                    l.weights.shape(),
                    l.bias.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(l.d_out());
        }
        validate_dims(&dims)?;
        Ok(MlpModel {
            layer_dims: dims,
            activation,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: inputs.shape(),
                right: (self.input_dim(), self.layers[0].d_out()),
            });
        }
        let last = self.layers.len() - 1;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { inputs } else { &activations[l - 1] };
            let mut z = matmul_nt(input, &layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = if l == last {
                softmax_rows(&z)
            } else {
                let mut a = z.clone();
                let act = self.activation;
                a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
                a
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            input: inputs.clone(),
            pre_activations,
            activations,
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let congruent = trace.depth() == self.layers.len()
            && trace.pre_activations.len() == self.layers.len()
            && trace.input.cols() == self.input_dim()
            && trace
                .pre_activations
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.cols() == l.d_out() && z.rows() == trace.batch_size());
        if !congruent {
            return Err(Error::InvalidArgument(format!(
                "forward trace of depth {} does not belong to a model with dims {:?}",
                trace.depth(),
                self.layer_dims
            )));
        }
        Ok(())
    }

    /// Gradients of the mean cross-entropy over the minibatch.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<GradientSet> {
        Ok(self.backprop(trace, labels)?.grads)
    }

    pub fn backprop(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<Backprop> {
        self.check_trace(trace)?;
        check_labels(labels, trace.batch_size(), self.num_classes())?;
        let batch = trace.batch_size() as f64;
        let n_layers = self.layers.len();

        // Per-example derivative of the loss w.r.t. the softmax logits.
        let mut delta = trace.probabilities().clone();
        for (r, &y) in labels.iter().enumerate() {
            delta[(r, y)] -= 1.0;
        }

        let mut grads = Vec::with_capacity(n_layers);
        let mut deltas = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let mut gw = matmul_tn(&delta, trace.layer_input(l))?;
            gw.scale(1.0 / batch);
            let gb: Vec<f64> = delta.column_sums().into_iter().map(|s| s / batch).collect();
            let next = if l > 0 {
                let mut d_act = matmul(&delta, &layer.weights)?;
                let act = self.activation;
                for (d, a) in d_act
                    .as_mut_slice()
                    .iter_mut()
                    .zip(trace.activations[l - 1].as_slice())
                {
                    *d *= act.derivative_from_output(*a);
                }
                Some(d_act)
            } else {
                None
            };
            grads.push(LayerParams {
                weights: gw,
                bias: gb,
            });
            deltas.push(std::mem::replace(
                &mut delta,
                next.unwrap_or_else(|| Matrix::zeros(0, 0)),
            ));
        }
        grads.reverse();
        deltas.reverse();
        Ok(Backprop {
            grads: GradientSet { layers: grads },
            deltas,
        })
    }

    pub fn flatten(&self) -> ParamVector {
        ParamVector(flatten_layers(&self.layers))
    }

    /// Rebuilds a model shaped like `template` from a flat vector.
    pub fn unflatten(pv: &ParamVector, template: &MlpModel) -> Result<MlpModel> {
        let mut model = template.clone();
        model.load_params(pv.as_slice())?;
        Ok(model)
    }

    /// Overwrites every parameter from a flat slice in canonical order.
    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ParamLength {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Class probabilities for each row of `inputs`.
    pub fn predict_proba(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut trace = self.forward(inputs)?;
        Ok(trace.activations.pop().unwrap())
    }

    /// Fraction of rows whose arg-max class equals the label.
    pub fn accuracy(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        let probs = self.predict_proba(inputs)?;
        check_labels(labels, probs.rows(), self.num_classes())?;
        Ok(accuracy_of(&probs, labels))
    }
}

pub(crate) fn glorot_fill(weights: &mut Matrix, rng: &mut Rng) {
    let (d_out, d_in) = weights.shape();
    let r = (6.0 / (d_in + d_out) as f64).sqrt();
    for w in weights.as_mut_slice() {
        *w = rng.uniform_range(-r, r);
    }
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "labels",
            left: (rows, classes),
            right: (labels.len(), 1),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes,
        });
    }
    Ok(())
}

/// Mean of `-log p(label)` over the batch, computed from the logits with a
/// log-sum-exp so confident predictions do not overflow.
pub fn cross_entropy(trace: &ForwardTrace, labels: &[usize]) -> Result<f64> {
    let logits = trace
        .pre_activations
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty trace".into()))?;
    check_labels(labels, logits.rows(), logits.cols())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let row = logits.row(r);
            log_sum_exp(row) - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

pub(crate) fn accuracy_of(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(probs.row(*r)) == y)
        .count();
    correct as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
