//! Small dense encoders with hand-written backpropagation. Outputs are always
//! L2-normalized rows.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Linear,
    TwoLayerPerceptron,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub arch: Arch,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl EncoderSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            arch: Arch::Linear,
            input_dim,
            hidden_dim: 0,
            output_dim,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            arch: Arch::TwoLayerPerceptron,
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self.arch {
            Arch::Linear => self.input_dim * self.output_dim + self.output_dim,
            Arch::TwoLayerPerceptron => {
                self.input_dim * self.hidden_dim
                    + self.hidden_dim
                    + self.hidden_dim * self.output_dim
                    + self.output_dim
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(invalid("encoder", "input and output dims must be positive"));
        }
        if self.arch == Arch::TwoLayerPerceptron && self.hidden_dim == 0 {
            return Err(invalid(
                "encoder",
                "hidden_dim must be positive for a perceptron",
            ));
        }
        Ok(())
    }
}

/// Weights are `in x out` matrices, biases `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub params: Vec<Array2<f64>>,
}

/// Intermediate values kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    hidden: Option<Array2<f64>>,
    pre_norm: Array2<f64>,
    lengths: Vec<f64>,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            [
                Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound)),
                Array2::zeros((1, fan_out)),
            ]
        };
        let params = match spec.arch {
            Arch::Linear => layer(spec.input_dim, spec.output_dim).to_vec(),
            Arch::TwoLayerPerceptron => {
                let mut p = layer(spec.input_dim, spec.hidden_dim).to_vec();
                p.extend(layer(spec.hidden_dim, spec.output_dim));
                p
            }
        };
        Ok(Self { spec, params })
    }

    /// Which parameter tensors receive weight decay (weights yes, biases no).
    pub fn decay_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.nrows() > 1).collect()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(EmbeddingMatrix, ForwardCache)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {} inputs, got {}",
                self.spec.input_dim,
                x.ncols()
            )));
        }
        let (pre_norm, hidden) = match self.spec.arch {
            Arch::Linear => (x.dot(&self.params[0]) + &self.params[1], None),
            Arch::TwoLayerPerceptron => {
                let h = (x.dot(&self.params[0]) + &self.params[1]).mapv(f64::tanh);
                (h.dot(&self.params[2]) + &self.params[3], Some(h))
            }
        };
        if pre_norm.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output"));
        }
        let lengths: Vec<f64> = pre_norm
            .axis_iter(Axis(0))
            .map(|r| r.dot(&r).sqrt().max(1e-12))
            .collect();
        let mut out = pre_norm.clone();
        for (mut row, &len) in out.axis_iter_mut(Axis(0)).zip(&lengths) {
            row /= len;
        }
        let emb = EmbeddingMatrix::new(out)?;
        Ok((
            emb,
            ForwardCache {
                input: x.clone(),
                hidden,
                pre_norm,
                lengths,
            },
        ))
    }

    pub fn embed(&self, x: &Array2<f64>) -> Result<EmbeddingMatrix> {
        Ok(self.forward(x)?.0)
    }

    /// Parameter gradients given the gradient with respect to the normalized outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Vec<Array2<f64>> {
        // through row normalization: (g - (g.u) u) / |z|
        let mut g = grad_out.clone();
        for (i, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
            let len = cache.lengths[i];
            let z = cache.pre_norm.row(i);
            let radial = row.dot(&z) / (len * len);
            row.scaled_add(-radial, &z);
            row /= len;
        }
        let bias = |g: &Array2<f64>| g.sum_axis(Axis(0)).insert_axis(Axis(0));
        match (&self.spec.arch, &cache.hidden) {
            (Arch::Linear, _) => vec![cache.input.t().dot(&g), bias(&g)],
            (Arch::TwoLayerPerceptron, Some(h)) => {
                let gw2 = h.t().dot(&g);
                let gb2 = bias(&g);
                let gh = g.dot(&self.params[2].t()) * h.mapv(|a| 1.0 - a * a);
                vec![cache.input.t().dot(&gh), bias(&gh), gw2, gb2]
            }
            (Arch::TwoLayerPerceptron, None) => {
                unreachable!("perceptron forward always caches hidden")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_backward(spec: EncoderSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(spec, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((5, spec.input_dim), || rng.gen_range(-1.0..1.0));
        let weights =
            Array2::from_shape_simple_fn((5, spec.output_dim), || rng.gen_range(-1.0..1.0));
        let objective = |e: &Encoder| (e.embed(&x).unwrap().values() * &weights).sum();
        let (_, cache) = enc.forward(&x).unwrap();
        let grads = enc.backward(&cache, &weights);
        let eps = 1e-6;
        for (p, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let (i, j) = (idx / g.ncols(), idx % g.ncols());
                let mut plus = enc.clone();
                plus.params[p][[i, j]] += eps;
                let mut minus = enc.clone();
                minus.params[p][[i, j]] -= eps;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let err = (fd - g[[i, j]]).abs() / fd.abs().max(g[[i, j]].abs()).max(1e-4);
                assert!(err < 1e-5, "param {p} [{i},{j}]: {fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        check_backward(EncoderSpec::linear(6, 4));
    }

    #[test]
    fn perceptron_backward_matches_finite_differences() {
        check_backward(EncoderSpec::mlp(6, 7, 4));
    }

    #[test]
    fn outputs_are_normalized_and_counts_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = EncoderSpec::mlp(32, 256, 32);
        let enc = Encoder::new(spec, &mut rng).unwrap();
        assert_eq!(
            enc.params.iter().map(|p| p.len()).sum::<usize>(),
            spec.parameter_count()
        );
        let x = Array2::from_shape_simple_fn((10, 32), || rng.gen_range(-1.0..1.0));
        assert!(enc.embed(&x).unwrap().is_normalized());
        assert!(enc.embed(&Array2::zeros((2, 31))).is_err());
        assert!(spec.parameter_count() >= 10 * EncoderSpec::linear(32, 16).parameter_count());
    }
}
