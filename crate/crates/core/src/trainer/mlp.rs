//! Fully connected network with ELU hidden layers and a linear output layer.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out × in`) followed by the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Pre-activations of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// `sizes` = input, hidden..., output.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::validation("mlp sizes", format!("need ≥ 2 positive sizes, got {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Xavier-uniform weights, zero biases; the output layer is scaled by `output_gain`.
    pub fn init<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.layers();
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mut bound = (6.0 / (n_in + n_out) as f64).sqrt();
            if l + 1 == layers {
                bound *= output_gain;
            }
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = rng.random_range(-bound..=bound);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Checks that deserialized parameters match the declared shape.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) || self.params.len() != param_count(&self.sizes) {
            return Err(Error::Dimension {
                what: "mlp parameters",
                expected: param_count(&self.sizes),
                got: self.params.len(),
            });
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(x)?;
        let layers = self.layers();
        let mut pre = Vec::with_capacity(layers);
        let mut h = x.to_vec();
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            h = if l + 1 == layers { z.clone() } else { z.iter().map(|v| elu(*v)).collect() };
            pre.push(z);
            off += n_in * n_out + n_out;
        }
        Ok((
            h,
            MlpCache {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`; returns `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.layers();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 != layers {
                for (gi, z) in g.iter_mut().zip(&cache.pre[l]) {
                    *gi *= elu_grad(*z);
                }
            }
            let input: Vec<f64> = if l == 0 {
                cache.input.clone()
            } else {
                cache.pre[l - 1].iter().map(|v| elu(*v)).collect()
            };
            let off = offsets[l];
            let weights = &self.params[off..off + n_in * n_out];
            let mut g_in = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += go * input[i];
                    g_in[i] += weights[o * n_in + i] * go;
                }
                grad[off + n_in * n_out + o] += go;
            }
            g = g_in;
        }
        g
    }
}
