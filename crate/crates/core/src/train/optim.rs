//! Adaptive moment estimation with decoupled weight decay.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    decay: Vec<bool>,
    step: i32,
}

impl AdamW {
    /// `decay[i]` selects which parameter tensors get weight decay.
    pub fn new(config: AdamWConfig, shapes: &[Array2<f64>], decay: Vec<bool>) -> Self {
        assert_eq!(shapes.len(), decay.len());
        let zeros = || {
            shapes
                .iter()
                .map(|p| Array2::zeros(p.raw_dim()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            decay,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if self.decay[k] {
                c.learning_rate * c.weight_decay
            } else {
                0.0
            };
            Zip::from(p)
                .and(g)
                .and(&mut self.first[k])
                .and(&mut self.second[k])
                .for_each(|p, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    *p -= decay * *p + c.learning_rate * update;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![array![[1.0, -2.0]]];
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p, vec![false]);
        opt.step(&mut p, &[array![[3.0, -0.5]]]);
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[0][[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![array![[5.0, -3.0]]];
        let cfg = AdamWConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p, vec![true]);
        for _ in 0..2000 {
            let g = p[0].mapv(|x| 2.0 * (x - 1.0));
            opt.step(&mut p, &[g]);
        }
        assert!((p[0][[0, 0]] - 1.0).abs() < 0.05 && (p[0][[0, 1]] - 1.0).abs() < 0.05);
    }
}
