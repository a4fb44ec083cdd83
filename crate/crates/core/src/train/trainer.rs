//! Student training loop wiring the losses and schedules into the ablation modes.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{coupled_views, AugmentConfig, AugmentationDraw};
use super::corpus::Corpus;
use super::encoder::EncoderSpec;
use super::evaluate::{evaluate_model, EvalConfig, ModelEval};
use super::model::DualEncoder;
use super::optim::{AdamW, AdamWConfig};
use super::teacher::Teacher;
use crate::error::{invalid, Error, Result};
use crate::io::metric_log::MetricRecord;
use crate::loss::{clip_loss, confidence_penalty, feature_kd, inf_norm, weighted_kd, LossReport};
use crate::schedule::{classify, Phase, ScheduleMode, ScheduleSpec, DEFAULT_TRANSITION_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Contrastive loss only.
    NoKd,
    /// Constant `lambda0` on the whole KD loss.
    Static,
    /// Static KD plus `lambda_feat` times feature alignment.
    StaticFeat,
    /// Whole KD loss decayed from `lambda0` to `lambda0 * r`, `r > 0`.
    PositiveDecay,
    /// Whole KD loss decayed from `lambda0` to zero.
    FullDecay,
    /// Contrastive loss plus `epsilon` times negative student entropy; no teacher.
    ConfPenalty,
    /// Whole KD loss decayed from `lambda0` through zero to `lambda0 * r`, `r < 0`.
    Coupled,
    /// Matched-pair KD term fixed at 1, non-matched term decayed from `beta0` to `beta0 * r`.
    Selective,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::NoKd,
        Mode::Static,
        Mode::StaticFeat,
        Mode::PositiveDecay,
        Mode::FullDecay,
        Mode::ConfPenalty,
        Mode::Coupled,
        Mode::Selective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::NoKd => "no_kd",
            Mode::Static => "static",
            Mode::StaticFeat => "static_feat",
            Mode::PositiveDecay => "positive_decay",
            Mode::FullDecay => "full_decay",
            Mode::ConfPenalty => "conf_penalty",
            Mode::Coupled => "coupled",
            Mode::Selective => "selective",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_teacher(self) -> bool {
        !matches!(self, Mode::NoKd | Mode::ConfPenalty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau_kd: f64,
    pub lambda0: f64,
    pub beta0: f64,
    pub min_ratio: f64,
    pub epsilon: f64,
    pub lambda_feat: f64,
    pub seed: u64,
    pub logit_scale_init: f64,
    pub logit_scale_max: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    /// Clip the global gradient infinity-norm; off when `None`.
    pub grad_clip: Option<f64>,
    pub transition_fraction: f64,
    pub student_dim: usize,
    /// Contrastive-only steps on fresh corpus draws before distillation starts; 0 trains from scratch.
    pub warm_start_steps: usize,
    pub warm_start_learning_rate: f64,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Selective,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-5,
            tau_kd: 5.0,
            lambda0: 1.0,
            beta0: 2.0,
            min_ratio: -0.8,
            epsilon: 0.1,
            lambda_feat: 2000.0,
            seed: 42,
            logit_scale_init: 1.0 / 0.07,
            logit_scale_max: 100.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weight_decay: 0.01,
            grad_clip: None,
            transition_fraction: DEFAULT_TRANSITION_FRACTION,
            student_dim: 16,
            warm_start_steps: 0,
            warm_start_learning_rate: 3e-3,
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks the combination of mode and schedule fields.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.student_dim == 0 {
            return Err(invalid(
                "config",
                "epochs, batch_size (>= 2) and student_dim must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.tau_kd > 0.0) {
            return Err(invalid(
                "config",
                "learning rate and tau_kd must be positive",
            ));
        }
        if !(self.logit_scale_init > 0.0 && self.logit_scale_max >= self.logit_scale_init) {
            return Err(invalid("logit_scale", "need 0 < init <= max"));
        }
        match self.mode {
            Mode::PositiveDecay if !(self.min_ratio > 0.0) => Err(invalid(
                "r",
                format!("positive_decay needs r > 0, got {}", self.min_ratio),
            )),
            Mode::Coupled if !(self.min_ratio < 0.0) => Err(invalid(
                "r",
                format!("coupled repulsive KD needs r < 0, got {}", self.min_ratio),
            )),
            Mode::ConfPenalty if !(self.epsilon > 0.0) => {
                Err(invalid("epsilon", "must be positive"))
            }
            Mode::StaticFeat if !(self.lambda_feat > 0.0) => {
                Err(invalid("lambda_feat", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Schedule of the scheduled KD weight, if the mode has one.
    pub fn schedule(&self) -> Result<Option<ScheduleSpec>> {
        let total = self.epochs as f64;
        let spec = match self.mode {
            Mode::NoKd | Mode::ConfPenalty => return Ok(None),
            Mode::Static | Mode::StaticFeat => {
                ScheduleSpec::constant(self.lambda0, total, ScheduleMode::Coupled)?
            }
            Mode::PositiveDecay | Mode::Coupled => {
                ScheduleSpec::new(self.lambda0, total, self.min_ratio, ScheduleMode::Coupled)?
            }
            Mode::FullDecay => ScheduleSpec::new(self.lambda0, total, 0.0, ScheduleMode::Coupled)?,
            Mode::Selective => {
                ScheduleSpec::new(self.beta0, total, self.min_ratio, ScheduleMode::Selective)?
            }
        };
        Ok(Some(spec))
    }

    fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// KD coefficients at one step: matched-pair term and non-matched term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdWeights {
    pub diag: f64,
    pub offdiag: f64,
    pub scheduled: f64,
}

/// Coefficients of the two KD terms for a schedule at epoch `t`.
///
/// Coupled schedules scale both terms; selective ones scale only the non-matched term unless
/// `schedule_diagonal` is set, in which case both follow the schedule.
pub fn kd_weights(schedule: &ScheduleSpec, t: f64, schedule_diagonal: bool) -> Result<KdWeights> {
    let w = schedule.weight_at(t)?;
    Ok(match schedule.mode {
        ScheduleMode::Coupled => KdWeights {
            diag: w,
            offdiag: w,
            scheduled: w,
        },
        ScheduleMode::Selective => KdWeights {
            diag: if schedule_diagonal { w } else { 1.0 },
            offdiag: w,
            scheduled: w,
        },
    })
}

/// Fractional epoch of global step `k` out of `total_steps`; first step at 0, last at `epochs`.
pub fn step_time(k: usize, total_steps: usize, epochs: usize) -> f64 {
    if total_steps <= 1 {
        return 0.0;
    }
    if k + 1 == total_steps {
        return epochs as f64;
    }
    epochs as f64 * k as f64 / (total_steps - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub epoch: usize,
    pub step: usize,
    pub t: f64,
    pub phase: Phase,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: DualEncoder,
    pub log: Vec<MetricRecord>,
    pub trace: Vec<StepTrace>,
    /// Index 0 is before training, index `e` after epoch `e`.
    pub epoch_evals: Vec<ModelEval>,
    pub steps_per_epoch: usize,
    pub teacher_hash_before: Option<String>,
    pub teacher_hash_after: Option<String>,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> &ModelEval {
        self.epoch_evals
            .last()
            .expect("at least the initial evaluation")
    }
}

/// Trainable state besides the dual encoder: feature-alignment projections.
struct Projections {
    image: Array2<f64>,
    text: Array2<f64>,
}

/// `d_s x d_t` identity padded with zeros.
fn padded_identity(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

pub fn student_model(
    config: &TrainConfig,
    corpus: &Corpus,
    rng: &mut ChaCha8Rng,
) -> Result<DualEncoder> {
    let d = corpus.spec.ambient_dim;
    DualEncoder::new(
        EncoderSpec::linear(d, config.student_dim),
        EncoderSpec::linear(d, config.student_dim),
        config.logit_scale_init,
        config.logit_scale_max,
        rng,
    )
}

/// Contrastive-only pretraining of the student on fresh draws from the corpus distribution.
pub fn warm_start(student: &mut DualEncoder, config: &TrainConfig, corpus: &Corpus) -> Result<()> {
    if config.warm_start_steps == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(4);
    let adam = AdamWConfig {
        learning_rate: config.warm_start_learning_rate,
        ..config.adam()
    };
    let mut opt = AdamW::new(adam, &student.pack(), student.decay_mask());
    let per_class = config.batch_size.div_ceil(corpus.spec.num_classes).max(1);
    for step in 0..config.warm_start_steps {
        let batch = corpus.draw(per_class, &mut rng);
        let fwd = student.forward(&batch.images, &batch.texts)?;
        let loss = clip_loss(&fwd.sim)?;
        if !loss.value.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step,
                what: "warm-start contrastive loss",
            });
        }
        let grads = student.backward(&fwd, &loss.grad, None, None).pack();
        let mut params = student.pack();
        opt.step(&mut params, &grads);
        student.unpack(&params);
    }
    Ok(())
}

pub fn train_student(
    config: &TrainConfig,
    corpus: &Corpus,
    teacher: Option<&Teacher>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode.uses_teacher() {
        match teacher {
            None => {
                return Err(invalid(
                    "teacher",
                    format!("mode {} needs a teacher", config.mode.name()),
                ))
            }
            Some(t) if !t.is_frozen() => return Err(invalid("teacher", "teacher must be frozen")),
            _ => {}
        }
    }
    let teacher = if config.mode.uses_teacher() {
        teacher
    } else {
        None
    };
    let schedule = config.schedule()?;
    let delta = schedule.map_or(0.0, |s| config.transition_fraction * s.initial.abs());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut student = student_model(config, corpus, &mut rng)?;
    warm_start(&mut student, config, corpus)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(3);

    let teacher_dim = teacher.map_or(config.student_dim, |t| t.model().image.spec.output_dim);
    let mut proj = Projections {
        image: padded_identity(config.student_dim, teacher_dim),
        text: padded_identity(config.student_dim, teacher_dim),
    };
    let use_feat = config.mode == Mode::StaticFeat;

    let mut params = student.pack();
    let mut mask = student.decay_mask();
    if use_feat {
        params.push(proj.image.clone());
        params.push(proj.text.clone());
        mask.extend([true, true]);
    }
    let mut opt = AdamW::new(config.adam(), &params, mask);

    let data = &corpus.train;
    let n = config.batch_size.min(data.len());
    let steps_per_epoch = (data.len() / n).max(1);
    let total_steps = steps_per_epoch * config.epochs;
    let teacher_hash_before = teacher.map(Teacher::parameter_hash);

    let mut log = Vec::with_capacity(total_steps);
    let mut trace = Vec::with_capacity(total_steps);
    let mut epoch_evals = vec![evaluate_model(&student, corpus, &config.eval)?];

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for step in 0..steps_per_epoch {
            let k = epoch * steps_per_epoch + step;
            let t = step_time(k, total_steps, config.epochs);
            let batch = &order[step * n..(step + 1) * n];

            let raw = data.images.select(Axis(0), batch);
            let mut views = Array2::zeros(raw.raw_dim());
            for (i, row) in raw.axis_iter(Axis(0)).enumerate() {
                let draw = AugmentationDraw::sample(&mut aug_rng, raw.ncols(), &config.augment);
                let (teacher_view, student_view) = coupled_views(row, &draw, &config.augment);
                debug_assert_eq!(teacher_view, student_view);
                views.row_mut(i).assign(&student_view);
            }
            let texts = data.texts.select(Axis(0), batch);

            let weights = match &schedule {
                Some(s) => Some(kd_weights(s, t, false)?),
                None => None,
            };
            let fwd = student.forward(&views, &texts)?;
            let clip = clip_loss(&fwd.sim)?;
            let mut grad_logits = clip.grad.clone();
            let mut report = LossReport {
                clip_loss: clip.value,
                ..Default::default()
            };

            let mut teacher_fwd = None;
            if let (Some(teacher), Some(w)) = (teacher, weights) {
                let tf = teacher.model().forward(&views, &texts)?;
                let kd = weighted_kd(&fwd.sim, &tf.sim, config.tau_kd, w.diag, w.offdiag)?;
                grad_logits += &kd.grad;
                report.kd_diag = kd.diag;
                report.kd_offdiag = kd.offdiag;
                report.kd_total = kd.combined;
                report.applied_lambda = w.diag;
                report.applied_beta = w.offdiag;
                teacher_fwd = Some(tf);
            }
            if config.mode == Mode::ConfPenalty {
                let cp = confidence_penalty(&fwd.sim)?;
                grad_logits.scaled_add(config.epsilon, &cp.grad);
                report.conf_penalty = cp.value;
            }

            let (mut extra_img, mut extra_txt) = (None, None);
            let mut grad_proj = None;
            if let (true, Some(tf)) = (use_feat, &teacher_fwd) {
                let fi = feature_kd(&fwd.img, &proj.image, &tf.img)?;
                let ft = feature_kd(&fwd.txt, &proj.text, &tf.txt)?;
                report.feat_kd = fi.value + ft.value;
                extra_img = Some(fi.grad_student * config.lambda_feat);
                extra_txt = Some(ft.grad_student * config.lambda_feat);
                grad_proj = Some((
                    fi.grad_projection * config.lambda_feat,
                    ft.grad_projection * config.lambda_feat,
                ));
            }

            let total = report.clip_loss
                + report.kd_total
                + config.epsilon * report.conf_penalty
                + config.lambda_feat * report.feat_kd;
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: k,
                    what: "training loss",
                });
            }

            let mut grads = student
                .backward(&fwd, &grad_logits, extra_img.as_ref(), extra_txt.as_ref())
                .pack();
            if let Some((gi, gt)) = grad_proj {
                grads.push(gi);
                grads.push(gt);
            }
            let gnorm = grads.iter().map(inf_norm).fold(0.0, f64::max);
            if !gnorm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: k,
                    what: "gradient",
                });
            }
            if let Some(clip_at) = config.grad_clip {
                if gnorm > clip_at {
                    for g in &mut grads {
                        *g *= clip_at / gnorm;
                    }
                }
            }
            report.grad_inf_norm = gnorm;

            let mut params = student.pack();
            if use_feat {
                params.push(proj.image.clone());
                params.push(proj.text.clone());
            }
            opt.step(&mut params, &grads);
            if use_feat {
                proj.text = params.pop().expect("text projection");
                proj.image = params.pop().expect("image projection");
            }
            student.unpack(&params);
            if !student.log_scale.is_finite()
                || params.iter().any(|p| p.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Divergence {
                    epoch,
                    step: k,
                    what: "student parameters",
                });
            }

            let phase = classify(weights.map_or(0.0, |w| w.scheduled), delta);
            let last_in_epoch = step + 1 == steps_per_epoch;
            let evaluation = if last_in_epoch {
                let ev = evaluate_model(&student, corpus, &config.eval)?;
                let out = (Some(ev.report.summary()), ev.geometry);
                epoch_evals.push(ev);
                out
            } else {
                (None, None)
            };
            log.push(MetricRecord {
                epoch,
                step,
                phase,
                applied_lambda: report.applied_lambda,
                applied_beta: report.applied_beta,
                loss_clip: report.clip_loss,
                loss_kd_diag: report.kd_diag,
                loss_kd_offdiag: report.kd_offdiag,
                loss_conf: report.conf_penalty,
                loss_feat: report.feat_kd,
                logit_scale: student.scale(),
                eval: evaluation.0,
                geometry: evaluation.1,
            });
            trace.push(StepTrace {
                epoch,
                step,
                t,
                phase,
                report,
            });
        }
    }

    Ok(TrainOutcome {
        student,
        log,
        trace,
        epoch_evals,
        steps_per_epoch,
        teacher_hash_after: teacher.map(Teacher::parameter_hash),
        teacher_hash_before,
    })
}
