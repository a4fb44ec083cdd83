//! Selective repulsive distillation for contrastive dual encoders.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{Direction, EmbeddingMatrix, RowDistributions, SimilarityMatrix};
pub use schedule::{Phase, ScheduleMode, ScheduleSpec};
