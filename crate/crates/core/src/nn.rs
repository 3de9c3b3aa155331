//! The shared policy network.
//!
//! A dense MLP maps `[observation, inflow]` to `[action logits, outflow]`.
//! Hidden layers use a smooth activation; both heads are linear and the
//! action head is turned into probabilities by [`softmax`]. Parameters live in
//! one flat vector (per layer: row-major weights, then biases) so gradients
//! and optimizer state share the same layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::InflowMode;
use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use crate::world::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    /// Number of discrete actions, also the number of message groups.
    pub actions: usize,
    /// Size `n` of one message. Zero disables communication.
    pub comm_size: usize,
    pub inflow_mode: InflowMode,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetShape {
    pub fn inflow_dim(&self) -> usize {
        self.inflow_mode.inflow_len(self.comm_size, self.actions)
    }

    /// Outflow always carries one message per group.
    pub fn outflow_dim(&self) -> usize {
        self.comm_size * self.actions
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.inflow_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.actions + self.outflow_dim()
    }

    /// `(fan_in, fan_out)` of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    /// Start of the weights in the flat vector; biases follow.
    offset: usize,
}

impl LayerView {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

/// Activations cached by [`PolicyNet::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub input: Vec<f64>,
    /// Post-activation output of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub comm_out: Vec<f64>,
    pub record: ForwardRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    shape: NetShape,
    layers: Vec<LayerView>,
    params: Vec<f64>,
}

impl PolicyNet {
    /// All parameters zero.
    pub fn zeros(shape: NetShape) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in shape.layer_dims() {
            layers.push(LayerView {
                fan_in,
                fan_out,
                offset,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Self {
            params: vec![0.0; offset],
            shape,
            layers,
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut net = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers.clone() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut net.params[layer.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, obs: &[f64], inflow: &[f64]) -> Result<ForwardOutput> {
        if obs.len() != self.shape.obs_dim {
            return Err(Error::ShapeMismatch {
                expected: self.shape.obs_dim,
                got: obs.len(),
            });
        }
        if inflow.len() != self.shape.inflow_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.inflow_dim(),
                got: inflow.len(),
            });
        }
        let mut input = Vec::with_capacity(self.shape.input_dim());
        input.extend_from_slice(obs);
        input.extend_from_slice(inflow);

        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { &input } else { &hidden[l - 1] };
            let y = self.dense(layer, x);
            if l < last {
                hidden.push(
                    y.into_iter()
                        .map(|v| self.shape.activation.apply(v))
                        .collect(),
                );
            } else {
                out = y;
            }
        }
        let comm_out = out.split_off(self.shape.actions);
        Ok(ForwardOutput {
            logits: out,
            comm_out,
            record: ForwardRecord { input, hidden },
        })
    }

    fn dense(&self, layer: &LayerView, x: &[f64]) -> Vec<f64> {
        let w = &self.params[layer.weights()];
        let b = &self.params[layer.biases()];
        let mut y = b.to_vec();
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
            *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }

    /// Reverse pass for one forward record. Parameter gradients are added
    /// into `grads`; the gradient with respect to the input is returned
    /// split as `(d_obs, d_inflow)`.
    pub fn backward(
        &self,
        record: &ForwardRecord,
        d_logits: &[f64],
        d_comm_out: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta = Vec::with_capacity(self.shape.output_dim());
        delta.extend_from_slice(d_logits);
        if d_comm_out.is_empty() {
            delta.resize(self.shape.output_dim(), 0.0);
        } else {
            delta.extend_from_slice(d_comm_out);
        }

        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let x = if l == 0 {
                &record.input
            } else {
                &record.hidden[l - 1]
            };
            let w = &self.params[layer.weights()];
            {
                let gw = &mut grads[layer.weights()];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[r * layer.fan_in..(r + 1) * layer.fan_in];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            for (g, &d) in grads[layer.biases()].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut dx = vec![0.0; layer.fan_in];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
                for (acc, &wi) in dx.iter_mut().zip(row) {
                    *acc += d * wi;
                }
            }
            if l > 0 {
                let act = &record.hidden[l - 1];
                for (g, &y) in dx.iter_mut().zip(act) {
                    *g *= self.shape.activation.grad_from_output(y);
                }
            }
            delta = dx;
        }
        let d_inflow = delta.split_off(self.shape.obs_dim);
        (delta, d_inflow)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> ActionDistribution {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    ActionDistribution(exps.into_iter().map(|e| e / total).collect())
}

/// Smallest log-probability a loss term can see.
pub fn log_floor() -> f64 {
    f64::MIN_POSITIVE.ln()
}

/// `-ln q[target]` with `q` given as a distribution.
pub fn cross_entropy(q: &ActionDistribution, target: usize) -> f64 {
    -q.0[target].max(f64::MIN_POSITIVE).ln()
}

/// Fused softmax cross-entropy on logits. Returns the loss and its gradient
/// with respect to the logits.
pub fn cross_entropy_with_logits(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let log_q = (logits[target] - lse).max(log_floor());
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    (-log_q, grad)
}

/// Rescales `grads` in place so their Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn adam_step(net: &mut PolicyNet, grads: &[f64], state: &mut AdamState) {
    state.update(net.params_mut(), grads);
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Serialized network. JSON floats are written in shortest round-trip form,
/// so a save/load cycle reproduces every parameter exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: Task,
    pub shape: NetShape,
    #[serde(default)]
    pub config: serde_json::Value,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_net(
        task: Task,
        net: &PolicyNet,
        config: serde_json::Value,
        optimizer: Option<AdamState>,
    ) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.fan_out,
                cols: l.fan_in,
                weights: net.params[l.weights()].to_vec(),
                biases: net.params[l.biases()].to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            task,
            shape: net.shape.clone(),
            config,
            layers,
            optimizer,
        }
    }

    pub fn to_net(&self) -> Result<PolicyNet> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::ConfigMismatch(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut net = PolicyNet::zeros(self.shape.clone());
        if net.layers.len() != self.layers.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} layers, shape implies {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (view, rec) in net.layers.clone().iter().zip(&self.layers) {
            if rec.rows != view.fan_out
                || rec.cols != view.fan_in
                || rec.weights.len() != view.fan_in * view.fan_out
                || rec.biases.len() != view.fan_out
            {
                return Err(Error::ConfigMismatch(format!(
                    "layer {}x{} does not match expected {}x{}",
                    rec.rows, rec.cols, view.fan_out, view.fan_in
                )));
            }
            net.params[view.weights()].copy_from_slice(&rec.weights);
            net.params[view.biases()].copy_from_slice(&rec.biases);
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
