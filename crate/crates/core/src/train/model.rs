//! Dual image/text encoder with a learned log-parameterized logit scale.

use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::encoder::{Encoder, EncoderSpec, ForwardCache};
use crate::error::Result;
use crate::loss::similarity;
use crate::matrix::{EmbeddingMatrix, SimilarityMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub image: Encoder,
    pub text: Encoder,
    pub log_scale: f64,
    pub scale_max: f64,
}

/// Forward pass of one paired batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub img: EmbeddingMatrix,
    pub txt: EmbeddingMatrix,
    pub sim: SimilarityMatrix,
    img_cache: ForwardCache,
    txt_cache: ForwardCache,
}

/// Parameter gradients of a [`DualEncoder`].
#[derive(Debug, Clone)]
pub struct DualGrads {
    pub image: Vec<Array2<f64>>,
    pub text: Vec<Array2<f64>>,
    pub log_scale: f64,
}

impl DualEncoder {
    pub fn new(
        image: EncoderSpec,
        text: EncoderSpec,
        scale_init: f64,
        scale_max: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            image: Encoder::new(image, rng)?,
            text: Encoder::new(text, rng)?,
            log_scale: scale_init.ln(),
            scale_max,
        })
    }

    /// Current logit scale, clamped at `scale_max`.
    pub fn scale(&self) -> f64 {
        self.log_scale.exp().min(self.scale_max)
    }

    fn scale_is_clamped(&self) -> bool {
        self.log_scale.exp() >= self.scale_max
    }

    pub fn parameter_count(&self) -> usize {
        self.image.spec.parameter_count() + self.text.spec.parameter_count() + 1
    }

    pub fn forward(&self, images: &Array2<f64>, texts: &Array2<f64>) -> Result<BatchForward> {
        let (img, img_cache) = self.image.forward(images)?;
        let (txt, txt_cache) = self.text.forward(texts)?;
        let sim = similarity(&img, &txt, self.scale())?;
        Ok(BatchForward {
            img,
            txt,
            sim,
            img_cache,
            txt_cache,
        })
    }

    /// Backpropagates a gradient on the similarity logits, plus optional direct gradients on
    /// the normalized image and text embeddings.
    pub fn backward(
        &self,
        fwd: &BatchForward,
        grad_logits: &Array2<f64>,
        extra_img: Option<&Array2<f64>>,
        extra_txt: Option<&Array2<f64>>,
    ) -> DualGrads {
        let scale = fwd.sim.scale();
        let mut g_img = grad_logits.dot(fwd.txt.values()) * scale;
        let mut g_txt = grad_logits.t().dot(fwd.img.values()) * scale;
        if let Some(e) = extra_img {
            g_img += e;
        }
        if let Some(e) = extra_txt {
            g_txt += e;
        }
        let log_scale = if self.scale_is_clamped() {
            0.0
        } else {
            (grad_logits * fwd.sim.logits()).sum()
        };
        DualGrads {
            image: self.image.backward(&fwd.img_cache, &g_img),
            text: self.text.backward(&fwd.txt_cache, &g_txt),
            log_scale,
        }
    }

    /// All trainable tensors in a fixed order: image params, text params, then the 1x1 log scale.
    pub fn pack(&self) -> Vec<Array2<f64>> {
        let mut p = self.image.params.clone();
        p.extend(self.text.params.iter().cloned());
        p.push(Array2::from_elem((1, 1), self.log_scale));
        p
    }

    pub fn unpack(&mut self, packed: &[Array2<f64>]) {
        let ni = self.image.params.len();
        let nt = self.text.params.len();
        self.image.params.clone_from_slice(&packed[..ni]);
        self.text.params.clone_from_slice(&packed[ni..ni + nt]);
        self.log_scale = packed[ni + nt][[0, 0]];
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.image.decay_mask();
        m.extend(self.text.decay_mask());
        m.push(false);
        m
    }

    /// Hex SHA-256 over every parameter's little-endian bytes.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.pack() {
            for v in p.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl DualGrads {
    pub fn pack(&self) -> Vec<Array2<f64>> {
        let mut p = self.image.clone();
        p.extend(self.text.iter().cloned());
        p.push(Array2::from_elem((1, 1), self.log_scale));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::clip_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = DualEncoder::new(
            EncoderSpec::mlp(5, 6, 3),
            EncoderSpec::linear(5, 3),
            5.0,
            100.0,
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_simple_fn((4, 5), || rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_simple_fn((4, 5), || rng.gen_range(-1.0..1.0));
        let loss = |m: &DualEncoder| clip_loss(&m.forward(&x, &y).unwrap().sim).unwrap().value;
        let fwd = model.forward(&x, &y).unwrap();
        let g = clip_loss(&fwd.sim).unwrap().grad;
        let grads = model.backward(&fwd, &g, None, None).pack();
        let packed = model.pack();
        let eps = 1e-6;
        for (p, gp) in grads.iter().enumerate() {
            for idx in 0..gp.len() {
                let (i, j) = (idx / gp.ncols(), idx % gp.ncols());
                let mut plus = packed.clone();
                plus[p][[i, j]] += eps;
                let mut minus = packed.clone();
                minus[p][[i, j]] -= eps;
                let (mut mp, mut mm) = (model.clone(), model.clone());
                mp.unpack(&plus);
                mm.unpack(&minus);
                let fd = (loss(&mp) - loss(&mm)) / (2.0 * eps);
                let err = (fd - gp[[i, j]]).abs() / fd.abs().max(gp[[i, j]].abs()).max(1e-4);
                assert!(
                    err < 1e-5,
                    "tensor {p} [{i},{j}]: fd {fd} vs {}",
                    gp[[i, j]]
                );
            }
        }
    }

    #[test]
    fn hash_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DualEncoder::new(
            EncoderSpec::linear(3, 2),
            EncoderSpec::linear(3, 2),
            10.0,
            100.0,
            &mut rng,
        )
        .unwrap();
        let mut other = model.clone();
        assert_eq!(model.parameter_hash(), other.parameter_hash());
        other.log_scale += 1e-12;
        assert_ne!(model.parameter_hash(), other.parameter_hash());
    }
}
