//! Dense feed-forward networks with exact backprop, Adam, and a
//! finite-difference gradient oracle.
//!
//! Everything is `f64`. A network evaluates one sample at a time; batching is
//! the caller's loop, which keeps summation order fixed and results
//! reproducible.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network has no layers")]
    Empty,
}

fn check_len(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative from the pre-activation and its activated value.
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `out x in` weights stored row-major, plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim], activation }
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim], activation }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Values recorded by [`Mlp::forward`]: `activations[0]` is the input and
/// `activations[l + 1]` the output of layer `l`; `pre[l]` is layer `l`'s
/// pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    /// Same order as [`Parameters::parameters`] on the network.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&g| g == 0.0))
    }
}

impl Mlp {
    /// Layers of widths `dims[0] -> dims[1] -> ...`, `hidden` activation on all
    /// but the last layer.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for l in &layers {
            check_len(l.in_dim * l.out_dim, l.weights.len())?;
            check_len(l.out_dim, l.bias.len())?;
        }
        for pair in layers.windows(2) {
            check_len(pair[0].out_dim, pair[1].in_dim)?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    /// Layer widths including the input.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Trace, NnError> {
        check_len(self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let z = layer.pre_activation(activations.last().expect("input pushed"));
            activations.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { activations, pre })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.pre_activation(&x).into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        Ok(x)
    }

    /// Exact gradients for all parameters and the input, given the gradient
    /// of the loss with respect to the network output.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>), NnError> {
        let mut grads = MlpGrads::zeros_like(self);
        let input_grad = self.backward_into(trace, output_grad, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but accumulates into `grads` (or skips parameter
    /// gradients entirely when `None`) and returns the input gradient.
    pub fn backward_into(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        grads: Option<&mut MlpGrads>,
    ) -> Result<Vec<f64>, NnError> {
        check_len(self.output_dim(), output_grad.len())?;
        let last = self.layers.len() - 1;
        let act = self.layers[last].activation;
        let pre_grad: Vec<f64> = output_grad
            .iter()
            .zip(&trace.pre[last])
            .zip(&trace.activations[last + 1])
            .map(|((g, &z), &a)| g * act.derivative(z, a))
            .collect();
        self.backward_pre_into(trace, &pre_grad, grads)
    }

    /// Backprop starting from the gradient with respect to the last layer's
    /// pre-activation (e.g. a fused sigmoid + cross-entropy gradient).
    pub fn backward_pre_into(
        &self,
        trace: &Trace,
        last_pre_grad: &[f64],
        mut grads: Option<&mut MlpGrads>,
    ) -> Result<Vec<f64>, NnError> {
        check_len(self.output_dim(), last_pre_grad.len())?;
        check_len(self.layers.len(), trace.pre.len())?;
        let mut delta = last_pre_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.activations[l];
            if let Some(g) = grads.as_deref_mut() {
                let lg = &mut g.layers[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    lg.bias[o] += d;
                    let row = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(x).for_each(|(w, xi)| *w += d * xi);
                }
            }
            let mut input_grad = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                input_grad.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
            if l == 0 {
                return Ok(input_grad);
            }
            let prev = &self.layers[l - 1];
            delta = input_grad
                .iter()
                .zip(&trace.pre[l - 1])
                .zip(&trace.activations[l])
                .map(|((g, &z), &a)| g * prev.activation.derivative(z, a))
                .collect();
        }
        unreachable!("loop returns at layer 0")
    }
}

/// Ordered view of a model's trainable values.
pub trait Parameters {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Parameters for Mlp {
    fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// The gradient is that of the clamped loss, so it vanishes where the clamp
/// is active.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    check_len(pred.len(), target.len())?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            if p < BCE_EPS || p > 1.0 - BCE_EPS {
                0.0
            } else {
                (pc - t) / (pc * (1.0 - pc)) / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean BCE value only, with the same clamping as [`bce_loss`].
pub fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / n
}

/// Gradient of mean BCE with respect to the logits of a sigmoid output:
/// `(p - t) / n`. This is the unclamped derivative, which keeps saturated
/// units trainable.
pub fn bce_logit_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t) / n).collect()
}

/// Squared L2 distance `||target - pred||^2` and its gradient `2 (pred - target)`.
pub fn l2_loss(target: &[f64], pred: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    check_len(target.len(), pred.len())?;
    let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&[f64]]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn for_model<P: Parameters + ?Sized>(config: AdamConfig, model: &P) -> Self {
        Self::new(config, &model.parameters())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<(), NnError> {
    check_len(state.first_moment.len(), params.len())?;
    check_len(params.len(), grads.len())?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        check_len(m.len(), p.len())?;
        check_len(p.len(), g.len())?;
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[slot];
        let v = &mut state.second_moment[slot];
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Denominator floor for [`relative_error`]; below it the error is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Central differences `(f(p + h) - f(p - h)) / 2h` for the parameter
/// entries listed as `(slice, index)` pairs.
pub fn finite_difference_at<T, F>(target: &mut T, indices: &[(usize, usize)], h: f64, loss: F) -> Vec<f64>
where
    T: Parameters + ?Sized,
    F: Fn(&T) -> f64,
{
    indices
        .iter()
        .map(|&(s, i)| {
            let original = target.parameters()[s][i];
            target.parameters_mut()[s][i] = original + h;
            let plus = loss(target);
            target.parameters_mut()[s][i] = original - h;
            let minus = loss(target);
            target.parameters_mut()[s][i] = original;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Every `(slice, index)` of a model's parameters.
pub fn all_indices<T: Parameters + ?Sized>(target: &T) -> Vec<(usize, usize)> {
    target.parameters().iter().enumerate().flat_map(|(s, p)| (0..p.len()).map(move |i| (s, i))).collect()
}

/// Worst relative error between analytic gradients (laid out like the
/// model's parameters) and central differences at `indices`.
pub fn max_relative_error<T, F>(target: &mut T, analytic: &[&[f64]], indices: &[(usize, usize)], h: f64, loss: F) -> f64
where
    T: Parameters + ?Sized,
    F: Fn(&T) -> f64,
{
    let numeric = finite_difference_at(target, indices, h, loss);
    indices.iter().zip(numeric).map(|(&(s, i), n)| relative_error(analytic[s][i], n)).fold(0.0, f64::max)
}

/// Checks [`Mlp::backward`] against central differences for a loss on the
/// network output. Returns the worst relative error over all parameters.
pub fn grad_check<L>(net: &Mlp, loss: L, input: &[f64], h: f64) -> Result<f64, NnError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let trace = net.forward(input)?;
    let (_, out_grad) = loss(trace.output());
    let (grads, _) = net.backward(&trace, &out_grad)?;
    let mut probe = net.clone();
    let indices = all_indices(&probe);
    Ok(max_relative_error(&mut probe, &grads.slices(), &indices, h, |n: &Mlp| {
        loss(&n.predict(input).expect("dimensions checked")).0
    }))
}
