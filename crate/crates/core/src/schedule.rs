//! Signed linear weight schedules for the distillation terms.
//!
//! A schedule starts at `initial` and moves linearly to `initial * min_ratio` at
//! `total_epochs`. With a negative ratio the weight changes sign part way through,
//! which turns attraction toward the teacher into repulsion from it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which part of the distillation loss the scheduled weight multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// One weight on the whole KD loss.
    Coupled,
    /// Weight on the non-matched term only; matched-pair term fixed at 1.
    Selective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub initial: f64,
    pub total_epochs: f64,
    pub min_ratio: f64,
    pub mode: ScheduleMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Attractive,
    Transition,
    Repulsive,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Attractive => "attractive",
            Phase::Transition => "transition",
            Phase::Repulsive => "repulsive",
        }
    }
}

/// Default half-width of the transition band relative to `|initial|`.
pub const DEFAULT_TRANSITION_FRACTION: f64 = 0.02;

impl ScheduleSpec {
    pub fn new(
        initial: f64,
        total_epochs: f64,
        min_ratio: f64,
        mode: ScheduleMode,
    ) -> Result<Self> {
        if !(total_epochs > 0.0 && total_epochs.is_finite()) {
            return Err(invalid(
                "total_epochs",
                format!("must be positive, got {total_epochs}"),
            ));
        }
        if !initial.is_finite() {
            return Err(invalid("initial", "must be finite"));
        }
        if !min_ratio.is_finite() {
            return Err(invalid("min_ratio", "must be finite"));
        }
        Ok(Self {
            initial,
            total_epochs,
            min_ratio,
            mode,
        })
    }

    /// A schedule that never changes.
    pub fn constant(weight: f64, total_epochs: f64, mode: ScheduleMode) -> Result<Self> {
        Self::new(weight, total_epochs, 1.0, mode)
    }

    /// `initial * (1 - (t / total) * (1 - min_ratio))` for `t` in `[0, total_epochs]`.
    pub fn weight_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total_epochs).contains(&t) {
            return Err(invalid(
                "t",
                format!("epoch {t} outside [0, {}]", self.total_epochs),
            ));
        }
        // Endpoints are returned directly so they are exact regardless of rounding.
        if t == 0.0 {
            return Ok(self.initial);
        }
        if t == self.total_epochs {
            return Ok(self.initial * self.min_ratio);
        }
        Ok(self.initial * (1.0 - (t / self.total_epochs) * (1.0 - self.min_ratio)))
    }

    /// Epoch at which the weight reaches zero, when that happens inside the schedule.
    pub fn zero_crossing(&self) -> Option<f64> {
        if self.initial == 0.0 || self.min_ratio >= 0.0 {
            return None;
        }
        Some(self.total_epochs / (1.0 - self.min_ratio))
    }

    pub fn default_transition_delta(&self) -> f64 {
        DEFAULT_TRANSITION_FRACTION * self.initial.abs()
    }

    pub fn phase_at(&self, t: f64, transition_delta: f64) -> Result<Phase> {
        if !(transition_delta >= 0.0) {
            return Err(invalid(
                "transition_delta",
                format!("must be >= 0, got {transition_delta}"),
            ));
        }
        Ok(classify(self.weight_at(t)?, transition_delta))
    }
}

/// Phase of an already computed weight.
pub fn classify(weight: f64, transition_delta: f64) -> Phase {
    if weight > transition_delta {
        Phase::Attractive
    } else if weight < -transition_delta {
        Phase::Repulsive
    } else {
        Phase::Transition
    }
}
