//! First-order parameter updates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    #[default]
    Sgd,
    Momentum {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    pub lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

/// Whether a step increases or decreases the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, lr: f64, len: usize) -> Self {
        Optimizer {
            cfg,
            lr,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn step(&mut self, values: &mut [f64], grads: &[f64], dir: Direction) {
        assert_eq!(values.len(), grads.len());
        assert_eq!(values.len(), self.first.len());
        let sign = match dir {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        self.steps = self.steps.saturating_add(1);
        match self.cfg {
            OptimizerConfig::Sgd => {
                for (v, g) in values.iter_mut().zip(grads) {
                    *v += sign * self.lr * g;
                }
            }
            OptimizerConfig::Momentum { beta } => {
                for ((v, g), m) in values.iter_mut().zip(grads).zip(&mut self.first) {
                    *m = beta * *m + g;
                    *v += sign * self.lr * *m;
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((v, g), m), s) in values
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *s = beta2 * *s + (1.0 - beta2) * g * g;
                    *v += sign * self.lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Rescales `grads` in place so their Euclidean norm is at most `max_norm`.
pub fn clip_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}
