//! Fully connected layers over row-stacked batches.

use serde::{Deserialize, Serialize};

use crate::numerics::{Bound, Graph, ParamId, ParamSet, Rng, Tensor, Var};

/// Negative slope of the leaky ReLU used inside coupling networks.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
    Uniform,
    /// Everything zero; coupling layers built this way are the identity.
    Zeros,
}

/// Dense layers with `act` after every layer but the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
    act: Activation,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`. Weights are stored `in × out`.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        sizes: &[usize],
        act: Activation,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, win) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (win[0], win[1]);
            let w = match init {
                Init::Uniform => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    rng.uniform_tensor(&[fan_in, fan_out], -bound, bound)
                }
                Init::Zeros => Tensor::zeros(&[fan_in, fan_out]),
            };
            let wid = params.add(format!("{prefix}.{i}.weight"), w);
            let bid = params.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[fan_out]));
            layers.push((wid, bid));
        }
        Self {
            sizes: sizes.to_vec(),
            layers,
            act,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, bias)) in self.layers.iter().enumerate() {
            h = g.matmul(h, b.var(w));
            h = g.add_row(h, b.var(bias));
            if i < last {
                h = match self.act {
                    Activation::Relu => g.relu(h),
                    Activation::LeakyRelu(s) => g.leaky_relu(h, s),
                };
            }
        }
        h
    }
}
