//! Desk-scale teacher/student distillation harness.

pub mod audit;
pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod evaluate;
pub mod model;
pub mod optim;
pub mod teacher;
pub mod trainer;

pub use audit::{finite_diff_audit, AuditPoint, LossSelector};
pub use augment::{coupled_views, AugmentConfig, AugmentationDraw};
pub use corpus::{generate_corpus, Corpus, Dataset, SyntheticCorpusSpec};
pub use encoder::{Arch, Encoder, EncoderSpec};
pub use evaluate::{evaluate_model, EvalConfig, ModelEval};
pub use model::DualEncoder;
pub use optim::{AdamW, AdamWConfig};
pub use teacher::{confusion_profile, pretrain_teacher, Teacher, TeacherConfig};
pub use trainer::{
    kd_weights, step_time, train_student, KdWeights, Mode, TrainConfig, TrainOutcome,
};
