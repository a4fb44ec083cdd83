//! Central finite-difference audit of the analytic loss gradients.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{clip_loss, confidence_penalty, feature_kd, kd_loss, kd_loss_decomposed};
use crate::matrix::{EmbeddingMatrix, SimilarityMatrix};

/// Loss whose gradient is audited.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSelector {
    Clip,
    Kd {
        tau_kd: f64,
    },
    KdDecomposed {
        tau_kd: f64,
        beta: f64,
    },
    ConfidencePenalty,
    /// Audited with respect to the student embeddings and the projection together.
    FeatureKd,
    /// `weight` times another loss.
    Weighted {
        weight: f64,
        inner: Box<LossSelector>,
    },
}

/// Inputs at which a loss is audited. Unused fields are ignored by the selected loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditPoint {
    pub student_logits: Array2<f64>,
    pub teacher_logits: Array2<f64>,
    pub student_emb: Array2<f64>,
    pub projection: Array2<f64>,
    pub teacher_emb: Array2<f64>,
}

impl AuditPoint {
    /// Logit-only point; feature fields get a trivial 1x1 shape.
    pub fn logits(student: Array2<f64>, teacher: Array2<f64>) -> Self {
        Self {
            student_logits: student,
            teacher_logits: teacher,
            student_emb: Array2::ones((1, 1)),
            projection: Array2::ones((1, 1)),
            teacher_emb: Array2::ones((1, 1)),
        }
    }

    pub fn features(
        student_emb: Array2<f64>,
        projection: Array2<f64>,
        teacher_emb: Array2<f64>,
    ) -> Self {
        Self {
            student_logits: Array2::zeros((1, 1)),
            teacher_logits: Array2::zeros((1, 1)),
            student_emb,
            projection,
            teacher_emb,
        }
    }
}

/// Coordinates above which a random subset is audited instead of every one.
pub const FULL_AUDIT_LIMIT: usize = 400;
const SUBSET_SIZE: usize = 200;

impl LossSelector {
    fn uses_features(&self) -> bool {
        match self {
            LossSelector::FeatureKd => true,
            LossSelector::Weighted { inner, .. } => inner.uses_features(),
            _ => false,
        }
    }

    /// Value and flattened gradient over the differentiable inputs of `point`.
    pub fn evaluate(&self, point: &AuditPoint) -> Result<(f64, Vec<f64>)> {
        let logits = || SimilarityMatrix::from_logits(point.student_logits.clone());
        let teacher = || SimilarityMatrix::from_logits(point.teacher_logits.clone());
        Ok(match self {
            LossSelector::Clip => flat(
                clip_loss(&logits()?)?.value,
                &[&clip_loss(&logits()?)?.grad],
            ),
            LossSelector::Kd { tau_kd } => {
                let l = kd_loss(&logits()?, &teacher()?, *tau_kd)?;
                flat(l.value, &[&l.grad])
            }
            LossSelector::KdDecomposed { tau_kd, beta } => {
                let l = kd_loss_decomposed(&logits()?, &teacher()?, *tau_kd, *beta)?;
                flat(l.combined, &[&l.grad])
            }
            LossSelector::ConfidencePenalty => {
                let l = confidence_penalty(&logits()?)?;
                flat(l.value, &[&l.grad])
            }
            LossSelector::FeatureKd => {
                let l = feature_kd(
                    &EmbeddingMatrix::new(point.student_emb.clone())?,
                    &point.projection,
                    &EmbeddingMatrix::new(point.teacher_emb.clone())?,
                )?;
                flat(l.value, &[&l.grad_student, &l.grad_projection])
            }
            LossSelector::Weighted { weight, inner } => {
                let (v, g) = inner.evaluate(point)?;
                (weight * v, g.into_iter().map(|x| weight * x).collect())
            }
        })
    }

    fn perturbed(&self, point: &AuditPoint, coord: usize, delta: f64) -> AuditPoint {
        let mut p = point.clone();
        if self.uses_features() {
            let ns = p.student_emb.len();
            let target = if coord < ns {
                &mut p.student_emb
            } else {
                &mut p.projection
            };
            let idx = if coord < ns { coord } else { coord - ns };
            let cols = target.ncols();
            target[[idx / cols, idx % cols]] += delta;
        } else {
            let cols = p.student_logits.ncols();
            p.student_logits[[coord / cols, coord % cols]] += delta;
        }
        p
    }
}

fn flat(value: f64, grads: &[&Array2<f64>]) -> (f64, Vec<f64>) {
    (
        value,
        grads.iter().flat_map(|g| g.iter().copied()).collect(),
    )
}

/// Maximum relative error `|fd - g| / max(|fd|, |g|, 1e-8)` between central differences and the
/// analytic gradient. Points with more than [`FULL_AUDIT_LIMIT`] coordinates are audited on a
/// seeded random subset of 200 of them.
pub fn finite_diff_audit(selector: &LossSelector, point: &AuditPoint, epsilon: f64) -> Result<f64> {
    let (_, grad) = selector.evaluate(point)?;
    let coords: Vec<usize> = if grad.len() <= FULL_AUDIT_LIMIT {
        (0..grad.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(grad.len() as u64);
        let mut c = sample(&mut rng, grad.len(), SUBSET_SIZE).into_vec();
        c.sort_unstable();
        c
    };
    let mut worst = 0.0f64;
    for c in coords {
        let (plus, _) = selector.evaluate(&selector.perturbed(point, c, epsilon))?;
        let (minus, _) = selector.evaluate(&selector.perturbed(point, c, -epsilon))?;
        let fd = (plus - minus) / (2.0 * epsilon);
        let diff = (fd - grad[c]).abs();
        if diff == 0.0 {
            continue;
        }
        worst = worst.max(diff / fd.abs().max(grad[c].abs()).max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.gen_range(-s..s))
    }

    #[test]
    fn clip_at_random_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AuditPoint::logits(random(&mut rng, 4, 4, 3.0), random(&mut rng, 4, 4, 3.0));
        assert!(finite_diff_audit(&LossSelector::Clip, &p, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn repulsive_decomposed_kd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AuditPoint::logits(random(&mut rng, 4, 4, 3.0), random(&mut rng, 4, 4, 3.0));
        let sel = LossSelector::KdDecomposed {
            tau_kd: 5.0,
            beta: -0.8,
        };
        assert!(finite_diff_audit(&sel, &p, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn zero_weight_term_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AuditPoint::logits(random(&mut rng, 4, 4, 3.0), random(&mut rng, 4, 4, 3.0));
        let sel = LossSelector::Weighted {
            weight: 0.0,
            inner: Box::new(LossSelector::Kd { tau_kd: 5.0 }),
        };
        let (_, g) = sel.evaluate(&p).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(finite_diff_audit(&sel, &p, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn large_points_use_a_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AuditPoint::logits(random(&mut rng, 24, 24, 2.0), random(&mut rng, 24, 24, 2.0));
        assert!(finite_diff_audit(&LossSelector::ConfidencePenalty, &p, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn feature_kd_covers_both_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AuditPoint::features(
            random(&mut rng, 4, 3, 1.0),
            random(&mut rng, 3, 5, 1.0),
            random(&mut rng, 4, 5, 1.0),
        );
        let (_, g) = LossSelector::FeatureKd.evaluate(&p).unwrap();
        assert_eq!(g.len(), 12 + 15);
        assert!(finite_diff_audit(&LossSelector::FeatureKd, &p, 1e-6).unwrap() < 1e-5);
    }
}
