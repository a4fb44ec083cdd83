//! Contrastive and distillation losses on `N x N` similarity logits.
//!
//! Every loss returns its value together with the exact gradient with respect to
//! its differentiable input. Teacher logits are constants throughout.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{log_softmax_rows, EmbeddingMatrix, SimilarityMatrix, NORM_TOLERANCE};

/// Scalar loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Knowledge-distillation cross-entropy split into matched-pair and non-matched terms.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedKd {
    /// Mean cross-entropy contribution of the `j == i` entries.
    pub diag: f64,
    /// Mean cross-entropy contribution of the `j != i` entries.
    pub offdiag: f64,
    /// `diag_weight * diag + offdiag_weight * offdiag`.
    pub combined: f64,
    /// Gradient of `combined` with respect to the student logits.
    pub grad: Array2<f64>,
}

/// Feature-alignment loss value and gradients for both trainable inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureKd {
    pub value: f64,
    pub grad_student: Array2<f64>,
    pub grad_projection: Array2<f64>,
}

/// Per-step breakdown of the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub clip_loss: f64,
    pub kd_total: f64,
    pub kd_diag: f64,
    pub kd_offdiag: f64,
    pub conf_penalty: f64,
    pub feat_kd: f64,
    /// Coefficient applied to the matched-pair KD term.
    pub applied_lambda: f64,
    /// Coefficient applied to the non-matched KD term.
    pub applied_beta: f64,
    pub grad_inf_norm: f64,
}

/// Scaled cosine similarity `scale * <img_i, txt_j>`.
pub fn similarity(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    scale: f64,
) -> Result<SimilarityMatrix> {
    if img.rows() != txt.rows() || img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs text {}x{}",
            img.rows(),
            img.dim(),
            txt.rows(),
            txt.dim()
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(
            "scale",
            format!("must be positive and finite, got {scale}"),
        ));
    }
    img.require_normalized("img")?;
    txt.require_normalized("txt")?;
    let logits = img.values().dot(&txt.values().t()) * scale;
    SimilarityMatrix::new(logits, scale)
}

/// Symmetric InfoNCE: mean of the image-to-text and text-to-image cross-entropies
/// against the matched diagonal.
pub fn clip_loss(sim: &SimilarityMatrix) -> Result<LossGrad> {
    let s = sim.logits().view();
    let n = s.nrows();
    let norm = 1.0 / (2.0 * n as f64);
    let log_row = log_softmax_rows(s, 1.0);
    let log_col = log_softmax_rows(s.t(), 1.0).reversed_axes();

    let mut value = 0.0;
    for i in 0..n {
        value -= log_row[[i, i]] + log_col[[i, i]];
    }
    value *= norm;

    let mut grad = (log_row.mapv(f64::exp) + log_col.mapv(f64::exp)) * norm;
    for i in 0..n {
        grad[[i, i]] -= 2.0 * norm;
    }
    Ok(LossGrad {
        value: value.max(0.0),
        grad,
    })
}

/// Symmetric logit distillation: teacher rows softened by `tau_kd`, student at native scale,
/// cross-entropy averaged over rows and over both directions.
pub fn kd_loss(
    student: &SimilarityMatrix,
    teacher: &SimilarityMatrix,
    tau_kd: f64,
) -> Result<LossGrad> {
    let parts = weighted_kd(student, teacher, tau_kd, 1.0, 1.0)?;
    Ok(LossGrad {
        value: parts.diag + parts.offdiag,
        grad: parts.grad,
    })
}

/// Distillation cross-entropy with the matched-pair term kept at unit weight and the
/// non-matched term scaled by `beta`, which may be negative.
pub fn kd_loss_decomposed(
    student: &SimilarityMatrix,
    teacher: &SimilarityMatrix,
    tau_kd: f64,
    beta: f64,
) -> Result<DecomposedKd> {
    weighted_kd(student, teacher, tau_kd, 1.0, beta)
}

/// General form behind both KD entry points: `diag_weight * L_diag + offdiag_weight * L_offdiag`.
///
/// The partition is applied to each row's cross-entropy sum; the student normalizer is shared,
/// so for row weights `w_j` the row gradient is `q_k * sum_j(w_j p_j) - w_k p_k`.
pub fn weighted_kd(
    student: &SimilarityMatrix,
    teacher: &SimilarityMatrix,
    tau_kd: f64,
    diag_weight: f64,
    offdiag_weight: f64,
) -> Result<DecomposedKd> {
    if student.size() != teacher.size() {
        return Err(Error::DimensionMismatch(format!(
            "student {}x{} vs teacher {}x{}",
            student.size(),
            student.size(),
            teacher.size(),
            teacher.size()
        )));
    }
    if !(tau_kd > 0.0 && tau_kd.is_finite()) {
        return Err(invalid("tau_kd", format!("must be positive, got {tau_kd}")));
    }
    if !diag_weight.is_finite() || !offdiag_weight.is_finite() {
        return Err(Error::NonFinite("KD weights"));
    }
    let n = student.size();
    let norm = 1.0 / (2.0 * n as f64);

    let i2t = directional_kd(
        student.logits().view(),
        teacher.logits().view(),
        tau_kd,
        diag_weight,
        offdiag_weight,
    );
    let t2i = directional_kd(
        student.logits().t(),
        teacher.logits().t(),
        tau_kd,
        diag_weight,
        offdiag_weight,
    );
    let diag = (i2t.diag + t2i.diag) * norm;
    let offdiag = (i2t.offdiag + t2i.offdiag) * norm;
    let grad = (i2t.grad + t2i.grad.reversed_axes()) * norm;
    Ok(DecomposedKd {
        diag,
        offdiag,
        combined: diag_weight * diag + offdiag_weight * offdiag,
        grad,
    })
}

struct DirectionalKd {
    diag: f64,
    offdiag: f64,
    grad: Array2<f64>,
}

/// Row sums (not yet averaged) of the partitioned cross-entropy for one direction.
fn directional_kd(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
    tau_kd: f64,
    diag_weight: f64,
    offdiag_weight: f64,
) -> DirectionalKd {
    let n = student.nrows();
    let log_q = log_softmax_rows(student, 1.0);
    let p = log_softmax_rows(teacher, tau_kd).mapv(f64::exp);
    let mut diag = 0.0;
    let mut offdiag = 0.0;
    let mut grad = Array2::zeros((n, n));
    for i in 0..n {
        let mut off_i = 0.0;
        for j in 0..n {
            if j != i {
                off_i -= p[[i, j]] * log_q[[i, j]];
            }
        }
        diag -= p[[i, i]] * log_q[[i, i]];
        offdiag += off_i;

        let p_ii = p[[i, i]];
        let mass = diag_weight * p_ii + offdiag_weight * (1.0 - p_ii);
        for k in 0..n {
            let w = if k == i { diag_weight } else { offdiag_weight };
            grad[[i, k]] = log_q[[i, k]].exp() * mass - w * p[[i, k]];
        }
    }
    DirectionalKd {
        diag,
        offdiag,
        grad,
    }
}

/// Negative mean row entropy of the student's distributions in both directions.
///
/// Minimizing `epsilon * value` pushes every row toward uniform.
pub fn confidence_penalty(student: &SimilarityMatrix) -> Result<LossGrad> {
    let s = student.logits().view();
    let n = s.nrows();
    let norm = 1.0 / (2.0 * n as f64);
    let (v_row, g_row) = neg_entropy_rows(s);
    let (v_col, g_col) = neg_entropy_rows(s.t());
    Ok(LossGrad {
        value: (v_row + v_col) * norm,
        grad: (g_row + g_col.reversed_axes()) * norm,
    })
}

fn neg_entropy_rows(s: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let log_q = log_softmax_rows(s, 1.0);
    let mut grad = Array2::zeros(s.raw_dim());
    let mut total = 0.0;
    for (i, row) in log_q.axis_iter(Axis(0)).enumerate() {
        let neg_h: f64 = row.iter().map(|&lq| lq.exp() * lq).sum();
        total += neg_h;
        for (k, &lq) in row.iter().enumerate() {
            grad[[i, k]] = lq.exp() * (lq - neg_h);
        }
    }
    (total, grad)
}

/// Mean squared distance between row-normalized `student * projection` and row-normalized
/// teacher embeddings.
pub fn feature_kd(
    student: &EmbeddingMatrix,
    projection: &Array2<f64>,
    teacher: &EmbeddingMatrix,
) -> Result<FeatureKd> {
    if student.dim() != projection.nrows()
        || projection.ncols() != teacher.dim()
        || student.rows() != teacher.rows()
    {
        return Err(Error::DimensionMismatch(format!(
            "student {}x{}, projection {}x{}, teacher {}x{}",
            student.rows(),
            student.dim(),
            projection.nrows(),
            projection.ncols(),
            teacher.rows(),
            teacher.dim()
        )));
    }
    if projection.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection"));
    }
    let n = student.rows();
    let target = if teacher.is_normalized() {
        teacher.clone()
    } else {
        EmbeddingMatrix::normalized(teacher.values().clone())?
    };
    let projected = student.values().dot(projection);
    let mut grad_projected = Array2::zeros(projected.raw_dim());
    let mut value = 0.0;
    for i in 0..n {
        let a = projected.row(i);
        let len = a.dot(&a).sqrt();
        if len <= NORM_TOLERANCE * NORM_TOLERANCE {
            return Err(invalid("projection", format!("projected row {i} vanishes")));
        }
        let u = a.mapv(|v| v / len);
        let diff = &u - &target.values().row(i);
        value += diff.dot(&diff);
        // d/du = 2 (u - t) / N, then through the normalization: (g - (g.u) u) / |a|
        let g = diff.mapv(|v| 2.0 * v / n as f64);
        let radial = g.dot(&u);
        Zip::from(grad_projected.row_mut(i))
            .and(&g)
            .and(&u)
            .for_each(|out, &gk, &uk| *out = (gk - radial * uk) / len);
    }
    Ok(FeatureKd {
        value: value / n as f64,
        grad_student: grad_projected.dot(&projection.t()),
        grad_projection: student.values().t().dot(&grad_projected),
    })
}

/// Largest absolute entry, used for gradient-norm logging.
pub fn inf_norm(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{Direction, RowDistributions};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.gen_range(-spread..spread))
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::normalized(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    fn sm(m: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::from_logits(m).unwrap()
    }

    // Independent brute-force reference: explicit softmax per row and column, plain loops.
    fn softmax_vec(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    fn row(m: &Array2<f64>, i: usize, scale: f64) -> Vec<f64> {
        (0..m.ncols()).map(|j| m[[i, j]] / scale).collect()
    }

    fn col(m: &Array2<f64>, j: usize, scale: f64) -> Vec<f64> {
        (0..m.nrows()).map(|i| m[[i, j]] / scale).collect()
    }

    fn oracle_clip(s: &Array2<f64>) -> f64 {
        let n = s.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let lse_r = row(s, i, 1.0).iter().map(|x| x.exp()).sum::<f64>().ln();
            let lse_c = col(s, i, 1.0).iter().map(|x| x.exp()).sum::<f64>().ln();
            total += (lse_r - s[[i, i]]) + (lse_c - s[[i, i]]);
        }
        total / (2.0 * n as f64)
    }

    fn oracle_kd(s: &Array2<f64>, t: &Array2<f64>, tau: f64) -> (f64, f64) {
        let n = s.nrows();
        let (mut diag, mut off) = (0.0, 0.0);
        for i in 0..n {
            for (p, q) in [
                (softmax_vec(&row(t, i, tau)), softmax_vec(&row(s, i, 1.0))),
                (softmax_vec(&col(t, i, tau)), softmax_vec(&col(s, i, 1.0))),
            ] {
                for j in 0..n {
                    let term = -p[j] * q[j].ln();
                    if j == i {
                        diag += term;
                    } else {
                        off += term;
                    }
                }
            }
        }
        (diag / (2.0 * n as f64), off / (2.0 * n as f64))
    }

    fn central_diff(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, eps: f64) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = x.clone();
            plus[[i, j]] += eps;
            let mut minus = x.clone();
            minus[[i, j]] -= eps;
            g[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        g
    }

    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn similarity_examples() {
        let v = EmbeddingMatrix::normalized(array![[1.0, 2.0, 2.0]]).unwrap();
        let s = similarity(&v, &v, 1.0).unwrap();
        assert!((s.logits()[[0, 0]] - 1.0).abs() < 1e-15);

        let e = EmbeddingMatrix::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let s = similarity(&e, &e, 10.0).unwrap();
        assert_eq!(s.logits(), &array![[10.0, 0.0], [0.0, 10.0]]);
        assert_eq!(s.scale(), 10.0);
    }

    #[test]
    fn similarity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_unit(&mut rng, 4, 8);
        let b = random_unit(&mut rng, 4, 8);
        let s = similarity(&a, &b, 2.5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut dot = 0.0;
                for k in 0..8 {
                    dot += a.values()[[i, k]] * b.values()[[j, k]];
                }
                assert!((s.logits()[[i, j]] - 2.5 * dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_unit(&mut rng, 4, 8);
        let b = random_unit(&mut rng, 3, 8);
        assert!(matches!(
            similarity(&a, &b, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(similarity(&a, &a, 0.0).is_err());
        assert!(similarity(&a, &a, -1.0).is_err());
        let raw = EmbeddingMatrix::new(array![[3.0, 4.0]]).unwrap();
        assert!(similarity(&raw, &raw, 1.0).is_err());
    }

    #[test]
    fn clip_degenerate_and_uniform() {
        assert_eq!(clip_loss(&sm(array![[7.3]])).unwrap().value, 0.0);
        let v = clip_loss(&sm(Array2::from_elem((2, 2), 0.4)))
            .unwrap()
            .value;
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clip_matches_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_logits(&mut rng, 3, 3.0);
        let out = clip_loss(&sm(s.clone())).unwrap();
        assert!((out.value - oracle_clip(&s)).abs() < 1e-10);
        let fd = central_diff(|x| clip_loss(&sm(x.clone())).unwrap().value, &s, 1e-6);
        assert!(max_rel_err(&out.grad, &fd) < 1e-5);
    }

    #[test]
    fn kd_self_distillation_equals_teacher_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_logits(&mut rng, 5, 2.0);
        let kd = kd_loss(&sm(s.clone()), &sm(s.clone()), 1.0).unwrap();
        let sim = sm(s);
        let mut entropy = 0.0;
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let p = RowDistributions::from_similarity(&sim, dir, 1.0)
                .unwrap()
                .probs;
            entropy -= p.iter().map(|&x| x * x.ln()).sum::<f64>();
        }
        entropy /= 10.0;
        assert!((kd.value - entropy).abs() < 1e-12);
        assert!(kd.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kd_uniform_is_log_n() {
        for n in [1usize, 2, 5, 9] {
            let v = kd_loss(
                &sm(Array2::from_elem((n, n), 0.3)),
                &sm(Array2::from_elem((n, n), -1.0)),
                5.0,
            )
            .unwrap()
            .value;
            assert!((v - (n as f64).ln()).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn kd_matches_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = random_logits(&mut rng, 4, 4.0);
        let t = random_logits(&mut rng, 4, 20.0);
        let out = kd_loss(&sm(s.clone()), &sm(t.clone()), 5.0).unwrap();
        let (d, o) = oracle_kd(&s, &t, 5.0);
        assert!((out.value - (d + o)).abs() < 1e-10);
        let fd = central_diff(
            |x| kd_loss(&sm(x.clone()), &sm(t.clone()), 5.0).unwrap().value,
            &s,
            1e-6,
        );
        assert!(max_rel_err(&out.grad, &fd) < 1e-5);
    }

    #[test]
    fn kd_errors() {
        let a = sm(Array2::zeros((3, 3)));
        let b = sm(Array2::zeros((2, 2)));
        assert!(matches!(
            kd_loss(&a, &b, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(kd_loss(&a, &a, 0.0).is_err());
        assert!(kd_loss_decomposed(&a, &a, -2.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = random_logits(&mut rng, 5, 3.0);
        let t = random_logits(&mut rng, 5, 10.0);
        let (ss, tt) = (sm(s.clone()), sm(t.clone()));
        let full = kd_loss(&ss, &tt, 5.0).unwrap();
        let one = kd_loss_decomposed(&ss, &tt, 5.0, 1.0).unwrap();
        assert!((one.combined - full.value).abs() < 1e-10);
        let (od, oo) = oracle_kd(&s, &t, 5.0);
        assert!((one.diag - od).abs() < 1e-12 && (one.offdiag - oo).abs() < 1e-12);

        let zero = kd_loss_decomposed(&ss, &tt, 5.0, 0.0).unwrap();
        let fd = central_diff(
            |x| {
                kd_loss_decomposed(&sm(x.clone()), &tt, 5.0, 0.0)
                    .unwrap()
                    .diag
            },
            &s,
            1e-6,
        );
        assert!(max_rel_err(&zero.grad, &fd) < 1e-5);

        let minus = kd_loss_decomposed(&ss, &tt, 5.0, -1.0).unwrap();
        for ((m, p), z) in minus.grad.iter().zip(one.grad.iter()).zip(zero.grad.iter()) {
            assert!(((m - z) + (p - z)).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposed_gradient_passes_finite_differences_for_negative_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let s = random_logits(&mut rng, 4, 3.0);
        let t = random_logits(&mut rng, 4, 15.0);
        let tt = sm(t);
        let out = kd_loss_decomposed(&sm(s.clone()), &tt, 5.0, -0.8).unwrap();
        let fd = central_diff(
            |x| {
                kd_loss_decomposed(&sm(x.clone()), &tt, 5.0, -0.8)
                    .unwrap()
                    .combined
            },
            &s,
            1e-6,
        );
        assert!(max_rel_err(&out.grad, &fd) < 1e-5);
    }

    #[test]
    fn confidence_penalty_examples() {
        let v = confidence_penalty(&sm(Array2::from_elem((3, 3), 1.0)))
            .unwrap()
            .value;
        assert!((v + 3f64.ln()).abs() < 1e-12);

        let mut peaked = Array2::zeros((1, 1));
        peaked[[0, 0]] = 20.0;
        assert!(confidence_penalty(&sm(peaked)).unwrap().value.abs() < 1e-6);

        // diagonal dominant rows and columns at +20: every distribution nearly one-hot
        let mut s = Array2::zeros((3, 3));
        for i in 0..3 {
            s[[i, i]] = 20.0;
        }
        assert!(confidence_penalty(&sm(s)).unwrap().value.abs() < 1e-6);
    }

    #[test]
    fn confidence_penalty_matches_entropy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = random_logits(&mut rng, 4, 3.0);
        let out = confidence_penalty(&sm(s.clone())).unwrap();
        let mut neg_h = 0.0;
        for i in 0..4 {
            for p in [softmax_vec(&row(&s, i, 1.0)), softmax_vec(&col(&s, i, 1.0))] {
                neg_h += p.iter().map(|x| x * x.ln()).sum::<f64>();
            }
        }
        assert!((out.value - neg_h / 8.0).abs() < 1e-12);
        let fd = central_diff(
            |x| confidence_penalty(&sm(x.clone())).unwrap().value,
            &s,
            1e-6,
        );
        assert!(max_rel_err(&out.grad, &fd) < 1e-5);
    }

    #[test]
    fn feature_kd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let e = random_unit(&mut rng, 5, 4);
        let id = Array2::eye(4);
        assert!(feature_kd(&e, &id, &e).unwrap().value.abs() < 1e-15);

        let a = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = EmbeddingMatrix::new(array![[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!((feature_kd(&a, &Array2::eye(2), &b).unwrap().value - 4.0).abs() < 1e-15);

        assert!(matches!(
            feature_kd(&a, &Array2::eye(3), &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn feature_kd_matches_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let student = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let proj = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let teacher = random_unit(&mut rng, 5, 6);
        let out = feature_kd(
            &EmbeddingMatrix::new(student.clone()).unwrap(),
            &proj,
            &teacher,
        )
        .unwrap();

        let mut oracle = 0.0;
        for i in 0..5 {
            let a: Vec<f64> = (0..6)
                .map(|k| (0..3).map(|m| student[[i, m]] * proj[[m, k]]).sum())
                .collect();
            let len = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            for k in 0..6 {
                oracle += (a[k] / len - teacher.values()[[i, k]]).powi(2);
            }
        }
        assert!((out.value - oracle / 5.0).abs() < 1e-12);

        let f_s = |x: &Array2<f64>| {
            feature_kd(&EmbeddingMatrix::new(x.clone()).unwrap(), &proj, &teacher)
                .unwrap()
                .value
        };
        assert!(max_rel_err(&out.grad_student, &central_diff(f_s, &student, 1e-6)) < 1e-5);
        let se = EmbeddingMatrix::new(student.clone()).unwrap();
        let f_p = |x: &Array2<f64>| feature_kd(&se, x, &teacher).unwrap().value;
        assert!(max_rel_err(&out.grad_projection, &central_diff(f_p, &proj, 1e-6)) < 1e-5);
    }
}
