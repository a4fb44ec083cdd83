//! Over-capacity teacher trained with the contrastive loss only, then frozen.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Dataset};
use super::encoder::EncoderSpec;
use super::evaluate::restricted_f1;
use super::model::DualEncoder;
use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::loss::clip_loss;
use crate::matrix::{Direction, RowDistributions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub image: EncoderSpec,
    pub text: EncoderSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Required zero-shot macro-F1 on held-out non-confusable classes.
    pub f1_floor: f64,
    pub logit_scale_init: f64,
    pub logit_scale_max: f64,
    /// How far captions of confusable classes are pulled toward their group's mean caption
    /// during teacher training, in `[0, 1]`. At 1 the teacher sees one caption per group.
    pub caption_merge: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            image: EncoderSpec::mlp(32, 256, 32),
            text: EncoderSpec::mlp(32, 256, 32),
            steps: 1500,
            batch_size: 64,
            learning_rate: 3e-3,
            f1_floor: 0.9,
            logit_scale_init: 1.0 / 0.07,
            logit_scale_max: 100.0,
            caption_merge: 0.8,
            seed: 7,
        }
    }
}

/// A trained teacher. Once frozen, its parameters cannot change.
#[derive(Debug, Clone)]
pub struct Teacher {
    model: DualEncoder,
    frozen: bool,
    /// Zero-shot macro-F1 on held-out non-confusable classes at freeze time.
    pub holdout_f1: f64,
}

impl Teacher {
    pub fn model(&self) -> &DualEncoder {
        &self.model
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Rejected for a frozen teacher.
    pub fn apply_update(&mut self, packed_params: &[Array2<f64>]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenTeacher);
        }
        self.model.unpack(packed_params);
        Ok(())
    }

    pub fn parameter_hash(&self) -> String {
        self.model.parameter_hash()
    }
}

pub fn pretrain_teacher(corpus: &Corpus, config: &TeacherConfig) -> Result<Teacher> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ corpus.spec.seed.rotate_left(17));
    let model = DualEncoder::new(
        config.image,
        config.text,
        config.logit_scale_init,
        config.logit_scale_max,
        &mut rng,
    )?;
    let mut teacher = Teacher {
        model,
        frozen: false,
        holdout_f1: 0.0,
    };
    let opt_cfg = AdamWConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    };
    let mut opt = AdamW::new(opt_cfg, &teacher.model.pack(), teacher.model.decay_mask());
    if !(0.0..=1.0).contains(&config.caption_merge) {
        return Err(crate::error::invalid("caption_merge", "must lie in [0, 1]"));
    }
    let per_class = config.batch_size.div_ceil(corpus.spec.num_classes).max(1);
    for step in 0..config.steps {
        let batch = corpus.draw(per_class, &mut rng);
        let texts = coarse_captions(corpus, &batch, config.caption_merge);
        let fwd = teacher.model.forward(&batch.images, &texts)?;
        let loss = clip_loss(&fwd.sim)?;
        if !loss.value.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step,
                what: "teacher contrastive loss",
            });
        }
        let grads = teacher.model.backward(&fwd, &loss.grad, None, None).pack();
        let mut params = teacher.model.pack();
        opt.step(&mut params, &grads);
        teacher.apply_update(&params)?;
    }

    let coarse: Vec<u32> = {
        let fine = corpus.spec.confusable_classes();
        (0..corpus.spec.num_classes as u32)
            .filter(|c| !fine.contains(c))
            .collect()
    };
    let f1 = restricted_f1(&teacher.model, corpus, &corpus.eval, &coarse)?;
    if f1 <= config.f1_floor {
        return Err(Error::TeacherUnderfit {
            f1,
            floor: config.f1_floor,
            steps: config.steps,
        });
    }
    teacher.holdout_f1 = f1;
    teacher.frozen = true;
    Ok(teacher)
}

/// Captions of `data` with each confusable class's mean shifted toward its group mean by `merge`.
pub fn coarse_captions(corpus: &Corpus, data: &Dataset, merge: f64) -> Array2<f64> {
    let mut texts = data.texts.clone();
    if merge == 0.0 {
        return texts;
    }
    for group in corpus.spec.confusable_groups() {
        let mut mean = Array1::<f64>::zeros(texts.ncols());
        for &c in &group {
            mean += &corpus.class_texts.row(c);
        }
        mean /= group.len() as f64;
        for (i, &label) in data.labels.iter().enumerate() {
            let c = label as usize;
            if group.contains(&c) {
                let shift = (&mean - &corpus.class_texts.row(c)) * merge;
                let mut row = texts.row_mut(i);
                row += &shift;
            }
        }
    }
    texts
}

/// Mean softened teacher probability on off-diagonal entries whose two samples come from a
/// confusable class pair, and on entries from distinct non-confusable pairs.
pub fn confusion_profile(
    teacher: &Teacher,
    corpus: &Corpus,
    data: &Dataset,
    tau_kd: f64,
) -> Result<(f64, f64)> {
    let fwd = teacher.model().forward(&data.images, &data.texts)?;
    let p = RowDistributions::from_similarity(&fwd.sim, Direction::ImageToText, tau_kd)?.probs;
    let (mut conf, mut n_conf, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
    for (i, row) in p.axis_iter(Axis(0)).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (a, b) = (data.labels[i], data.labels[j]);
            if a == b {
                continue;
            }
            if corpus.spec.is_confusable_pair(a, b) {
                conf += v;
                n_conf += 1;
            } else {
                other += v;
                n_other += 1;
            }
        }
    }
    Ok((conf / n_conf.max(1) as f64, other / n_other.max(1) as f64))
}
