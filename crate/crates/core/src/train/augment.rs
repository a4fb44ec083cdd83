//! Feature-space augmentation with one shared draw per sample for teacher and student.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::gaussian_vec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation angles are drawn from `[-max_angle, max_angle]` radians.
    pub max_angle: f64,
    /// Scale factors are drawn from `[1 - scale_jitter, 1 + scale_jitter]`.
    pub scale_jitter: f64,
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_angle: 0.3,
            scale_jitter: 0.1,
            noise_sigma: 0.02,
        }
    }
}

/// Parameters of one random affine-plus-noise transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationDraw {
    /// Coordinates spanning the rotation plane.
    pub plane: (usize, usize),
    pub angle: f64,
    pub scale: f64,
    /// Seeds the additive noise vector.
    pub noise_id: u64,
}

impl AugmentationDraw {
    pub fn sample(rng: &mut impl Rng, dim: usize, config: &AugmentConfig) -> Self {
        let a = rng.gen_range(0..dim);
        let b = if dim > 1 {
            (a + rng.gen_range(1..dim)) % dim
        } else {
            a
        };
        let angle = if config.max_angle > 0.0 {
            rng.gen_range(-config.max_angle..=config.max_angle)
        } else {
            0.0
        };
        let scale = if config.scale_jitter > 0.0 {
            rng.gen_range(1.0 - config.scale_jitter..=1.0 + config.scale_jitter)
        } else {
            1.0
        };
        Self {
            plane: (a, b),
            angle,
            scale,
            noise_id: rng.gen(),
        }
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>, config: &AugmentConfig) -> Array1<f64> {
        let mut out = x.to_owned();
        if !config.enabled {
            return out;
        }
        let (a, b) = self.plane;
        if a != b {
            let (c, s) = (self.angle.cos(), self.angle.sin());
            let (xa, xb) = (x[a], x[b]);
            out[a] = c * xa - s * xb;
            out[b] = s * xa + c * xb;
        }
        out *= self.scale;
        if config.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_id);
            out.scaled_add(config.noise_sigma, &gaussian_vec(x.len(), &mut rng));
        }
        out
    }
}

/// Teacher and student views of one sample, both produced from the same draw.
pub fn coupled_views(
    sample: ArrayView1<'_, f64>,
    draw: &AugmentationDraw,
    config: &AugmentConfig,
) -> (Array1<f64>, Array1<f64>) {
    (draw.apply(sample, config), draw.apply(sample, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn disabled_returns_raw_sample() {
        let x = array![0.5, -1.0, 2.0];
        let cfg = AugmentConfig {
            enabled: false,
            ..Default::default()
        };
        let draw = AugmentationDraw::sample(&mut ChaCha8Rng::seed_from_u64(0), 3, &cfg);
        let (t, s) = coupled_views(x.view(), &draw, &cfg);
        assert_eq!(t, x);
        assert_eq!(s, x);
    }

    #[test]
    fn shared_draw_gives_identical_views() {
        let x = array![0.5, -1.0, 2.0, 0.1];
        let cfg = AugmentConfig::default();
        let draw = AugmentationDraw::sample(&mut ChaCha8Rng::seed_from_u64(1), 4, &cfg);
        let (t, s) = coupled_views(x.view(), &draw, &cfg);
        assert_eq!(t, s);
        assert_ne!(t, x);
        assert_eq!(coupled_views(x.view(), &draw, &cfg), (t, s));
    }

    #[test]
    fn different_draws_differ() {
        let x = array![0.5, -1.0, 2.0, 0.1, 0.0, 1.0];
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let views: Vec<Array1<f64>> = (0..100)
            .map(|_| AugmentationDraw::sample(&mut rng, 6, &cfg).apply(x.view(), &cfg))
            .collect();
        for i in 0..views.len() {
            for j in (i + 1)..views.len() {
                assert_ne!(views[i], views[j]);
            }
        }
    }
}
