//! Small dense networks evaluated on [`Var`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{ParamVector, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Layer widths from input to output, e.g. `[24, 16, 16, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "network widths must have at least two positive entries, got {widths:?}"
            )));
        }
        Ok(Mlp { widths, activation })
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Zero parameters laid out as `layer{l}.weight` (out × in) then `layer{l}.bias`.
    pub fn zero_params(&self) -> ParamVector {
        let names: Vec<(String, String)> = (0..self.widths.len() - 1)
            .map(|l| (format!("layer{l}.weight"), format!("layer{l}.bias")))
            .collect();
        let mut shapes = Vec::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            shapes.push((names[l].0.as_str(), w[1], w[0]));
            shapes.push((names[l].1.as_str(), w[1], 1));
        }
        ParamVector::zeros(&shapes)
    }

    /// Uniform Glorot initialization for hidden layers; the output layer is
    /// scaled by `output_gain`.
    pub fn init_params(&self, rng: &mut impl Rng, output_gain: f64) -> ParamVector {
        let mut p = self.zero_params();
        let layers = self.widths.len() - 1;
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                bound *= output_gain;
            }
            let values = p.values_mut();
            for v in &mut values[offset..offset + fan_in * fan_out] {
                *v = rng.gen_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        p
    }

    /// Forward pass; the output layer is linear.
    pub fn forward(&self, params: &[Var], input: &[Var]) -> Vec<Var> {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        assert_eq!(input.len(), self.inputs(), "input width mismatch");
        let layers = self.widths.len() - 1;
        let mut x: Vec<Var> = input.to_vec();
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut y = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let z = Var::dot(&weights[j * n_in..(j + 1) * n_in], &x) + bias[j];
                y.push(if l + 1 == layers {
                    z
                } else {
                    match self.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Relu => z.relu(),
                    }
                });
            }
            x = y;
        }
        x
    }
}
