//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Every layer computes `y = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Hidden layers use `tanh`; the output layer is the
//! identity. Gradients share the parameter layout, so a gradient is just
//! another [`MlpParams`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weight.chunks_exact(self.in_dim).zip(&self.bias) {
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
            out.push(self.activation.apply(z));
        }
    }
}

/// How the output layer is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputInit {
    /// Same `1/sqrt(fan_in)` uniform init as hidden layers.
    Default,
    /// Default init multiplied by the given factor; small factors give a
    /// near-zero network output at start.
    Scaled(f64),
    /// All output weights and biases zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Activations recorded by a forward pass, consumed by [`MlpParams::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[k + 1]` is the output of layer `k`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl MlpParams {
    /// Builds a network with layer sizes `sizes = [in, h1, ..., out]`,
    /// tanh hidden activations and an identity output.
    pub fn new(sizes: &[usize], output_init: OutputInit, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be > 0, got {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let is_output = k + 1 == n;
            let activation = if is_output {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            let scale = match (is_output, output_init) {
                (true, OutputInit::Zero) => 0.0,
                (true, OutputInit::Scaled(s)) => s,
                _ => 1.0,
            };
            let limit = 1.0 / (fan_in as f64).sqrt();
            let mut layer = Dense::zeros(fan_in, fan_out, activation);
            for w in &mut layer.weight {
                *w = scale * rng.random_range(-limit..limit);
            }
            for b in &mut layer.bias {
                *b = scale * rng.random_range(-limit..limit);
            }
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    /// Validates dimension chaining and finiteness.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config(format!("layer {k} has a zero dimension")));
            }
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Config(format!(
                    "layer {k} storage does not match {}x{}",
                    l.out_dim, l.in_dim
                )));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim != l.out_dim {
                    return Err(Error::Config(format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        l.out_dim,
                        k + 1,
                        next.in_dim
                    )));
                }
            }
        }
        let p = Self { layers };
        if let Some(k) = p.first_non_finite_layer() {
            return Err(Error::Config(format!("layer {k} has non-finite entries")));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[in, h1, ..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            l.weight.iter().chain(&l.bias).any(|v| !v.is_finite())
        })
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite_layer().is_none()
    }

    /// Parameters flattened layer by layer (weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Config(format!(
                "flat parameter length {} != {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x = 0.0);
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "network input has dim {}, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Scalar-output convenience.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64> {
        let out = self.forward(input)?;
        if out.len() != 1 {
            return Err(Error::Config(format!(
                "expected scalar output, network produces {}",
                out.len()
            )));
        }
        Ok(out[0])
    }

    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<()> {
        self.check_input(input)?;
        cache.acts.resize_with(self.layers.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (k, l) in self.layers.iter().enumerate() {
            let (before, after) = cache.acts.split_at_mut(k + 1);
            l.forward_into(&before[k], &mut after[0]);
        }
        Ok(())
    }

    /// Accumulates the gradient of `<upstream, output>` into `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut MlpParams,
    ) -> Result<Vec<f64>> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Config("forward cache does not match network depth".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Config(format!(
                "upstream gradient has dim {}, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if !grads.same_shape(self) {
            return Err(Error::Config("gradient buffer shape mismatch".into()));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let out = &cache.acts[k + 1];
            let inp = &cache.acts[k];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= l.activation.derivative_from_output(*y);
            }
            let g = &mut grads.layers[k];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weight[o * l.in_dim..(o + 1) * l.in_dim];
                for (gw, x) in row.iter_mut().zip(inp) {
                    *gw += d * x;
                }
            }
            let mut prev = vec![0.0; l.in_dim];
            for (o, d) in delta.iter().enumerate() {
                let row = &l.weight[o * l.in_dim..(o + 1) * l.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

/// One-shot forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    params.forward(input)
}

/// One-shot backward pass: gradient of `<upstream, f(input)>` with respect to
/// every parameter, plus the input gradient.
pub fn mlp_backward(
    params: &MlpParams,
    input: &[f64],
    upstream: &[f64],
) -> Result<(MlpParams, Vec<f64>)> {
    let mut cache = ForwardCache::default();
    params.forward_cached(input, &mut cache)?;
    let mut grads = params.zeros_like();
    let dx = params.backward_into(&cache, upstream, &mut grads)?;
    Ok((grads, dx))
}
