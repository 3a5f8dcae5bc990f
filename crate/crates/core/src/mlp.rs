//! A small dense feed-forward network with exact reverse-mode gradients.
//!
//! Shared by the imputation model, the approximated affine estimator, and
//! the trade-off coefficient head. Everything is plain `f64` and
//! deterministic given a seed; the finite-difference gradient check in the
//! tests is the contract every consumer relies on.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_stream;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input dimension {got} does not match first layer input {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("stale forward cache: run forward before backward")]
    StaleCache,
    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// One dense layer: `out = act(W x + b)`, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

/// Per-layer activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `values[0]` is the input, `values[i]` the output of layer `i-1`.
    pub values: Vec<Vec<f64>>,
}

/// Gradients aligned with [`MlpModel::layers`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| vec![vec![0.0; l.input_dim()]; l.output_dim()])
                .collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.output_dim()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (va, vb) in ra.iter_mut().zip(rb) {
                    *va += scale * vb;
                }
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (va, vb) in a.iter_mut().zip(b) {
                *va += scale * vb;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for layer in &self.weights {
            for row in layer {
                for v in row {
                    s += v * v;
                }
            }
        }
        for layer in &self.bias {
            for v in layer {
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Rescales the gradient in place so its L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for layer in &mut self.weights {
                for row in layer {
                    for v in row {
                        *v *= scale;
                    }
                }
            }
            for layer in &mut self.bias {
                for v in layer {
                    *v *= scale;
                }
            }
        }
    }
}

impl MlpModel {
    /// Builds a model with the given layer sizes, e.g. `[16, 64, 32, 16, 1]`.
    /// Hidden layers use `hidden`, the last layer `head`. Weights are
    /// initialized uniform in `+-1/sqrt(fan_in)`, biases at zero.
    pub fn random(dims: &[usize], hidden: Activation, head: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = derive_stream(seed, 3);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect();
            let activation =
                if layers.len() + 2 == dims.len() { head } else { hidden };
            layers.push(Layer { weights, bias: vec![0.0; fan_out], activation });
        }
        Self { layers }
    }

    /// All-zero parameters; a sigmoid head then outputs 0.5 everywhere.
    pub fn zeros(dims: &[usize], hidden: Activation, head: Activation) -> Self {
        let mut model = Self::random(dims, hidden, head, 0);
        for layer in &mut model.layers {
            for row in &mut layer.weights {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Forward pass returning the output and the cache for backprop.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                got: input.len(),
                expected: self.input_dim(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().unwrap();
            let mut out = Vec::with_capacity(layer.output_dim());
            for (row, b) in layer.weights.iter().zip(&layer.bias) {
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                out.push(layer.activation.apply(z));
            }
            values.push(out);
        }
        Ok((values.last().unwrap().clone(), ForwardCache { values }))
    }

    /// Scalar-output convenience forward.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64, MlpError> {
        let (out, _) = self.forward(input)?;
        Ok(out[0])
    }

    /// Reverse-mode gradients of a loss whose gradient w.r.t. the network
    /// output is `output_grad`. Returns parameter gradients; the cache must
    /// come from a forward pass on this model.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<Gradients, MlpError> {
        if cache.values.len() != self.layers.len() + 1
            || output_grad.len() != self.output_dim()
        {
            return Err(MlpError::StaleCache);
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let outputs = &cache.values[li + 1];
            let inputs = &cache.values[li];
            // through the activation
            let dz: Vec<f64> = upstream
                .iter()
                .zip(outputs)
                .map(|(g, &y)| g * layer.activation.derivative_from_output(y))
                .collect();
            for (o, &dzo) in dz.iter().enumerate() {
                grads.bias[li][o] = dzo;
                for (i, &x) in inputs.iter().enumerate() {
                    grads.weights[li][o][i] = dzo * x;
                }
            }
            let mut down = vec![0.0; inputs.len()];
            for (o, &dzo) in dz.iter().enumerate() {
                for (i, w) in layer.weights[o].iter().enumerate() {
                    down[i] += dzo * w;
                }
            }
            upstream = down;
        }
        Ok(grads)
    }

    /// In-place SGD step: `param -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (wg, bg)) in
            self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias))
        {
            for (row, grow) in layer.weights.iter_mut().zip(wg) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * g;
                }
            }
            for (b, g) in layer.bias.iter_mut().zip(bg) {
                *b -= lr * g;
            }
        }
    }

    /// Shrinks every weight toward zero by `1 - factor`; biases are left
    /// alone. Implements decoupled L2 regularization.
    pub fn decay_weights(&mut self, factor: f64) {
        let scale = 1.0 - factor;
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for w in row.iter_mut() {
                    *w *= scale;
                }
            }
        }
    }

    /// SHA-256 digest of the serialized parameters; used to enforce the
    /// stop-gradient contract on frozen models.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("model serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        format!("{:x}", hasher.finalize())
    }

    /// Flattens all parameters; paired with [`MlpModel::set_flat`] by the
    /// finite-difference gradient checks.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for v in row.iter_mut() {
                    *v = *it.next().expect("flat vector long enough");
                }
            }
            for v in layer.bias.iter_mut() {
                *v = *it.next().expect("flat vector long enough");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Flattens gradients in the same order as [`MlpModel::flat_params`].
pub fn flat_grads(grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for (wg, bg) in grads.weights.iter().zip(&grads.bias) {
        for row in wg {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(bg);
    }
    out
}

/// Max relative error between analytic gradients and central finite
/// differences of `loss` over all parameters.
pub fn gradient_check<L>(model: &MlpModel, grads: &Gradients, loss: L, h: f64) -> f64
where
    L: Fn(&MlpModel) -> f64,
{
    let analytic = flat_grads(grads);
    let base = model.flat_params();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let mut m = model.clone();
        m.set_flat(&plus);
        let lp = loss(&m);
        m.set_flat(&minus);
        let lm = loss(&m);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
