//! Experiment configuration: flat dotted keys in a TOML file, plus command-line overrides.
//!
//! ```toml
//! # comments start with '#'
//! train.mode = "selective"
//! train.beta0 = 2.0
//! train.r = -0.8
//! corpus.confusable_pairs = "0-1,0-2,1-2"
//! ```
//!
//! Every key must be known; an unknown key fails with its name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::train::{Mode, SyntheticCorpusSpec, TeacherConfig, TrainConfig};

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub corpus: SyntheticCorpusSpec,
    pub teacher: TeacherConfig,
}

/// Learning rate of the default desk benchmark. The paper's 1e-5 barely moves a
/// from-scratch toy student in 20 short epochs.
pub const DESK_LEARNING_RATE: f64 = 1e-3;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl ExperimentConfig {
    /// Default synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            train: TrainConfig {
                learning_rate: DESK_LEARNING_RATE,
                ..TrainConfig::default()
            },
            corpus: SyntheticCorpusSpec::default(),
            teacher: TeacherConfig::default(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config = Self::benchmark();
        config.apply_toml(&text)?;
        Ok(config)
    }

    /// Applies every key of a TOML document on top of the current values.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut flat = Vec::new();
        flatten("", &Value::Table(table), &mut flat);
        for (key, value) in flat {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override; the value is read as a TOML literal, or as a bare string.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        let t = &mut self.train;
        let c = &mut self.corpus;
        let h = &mut self.teacher;
        match key {
            "train.mode" => {
                let s = string(key, value)?;
                t.mode = Mode::parse(&s)
                    .ok_or_else(|| Error::Config(format!("unknown mode `{s}` for {key}")))?;
            }
            "train.epochs" => t.epochs = uint(key, value)?,
            "train.batch_size" => t.batch_size = uint(key, value)?,
            "train.learning_rate" | "train.lr" => t.learning_rate = float(key, value)?,
            "train.tau_kd" => t.tau_kd = float(key, value)?,
            "train.lambda0" => t.lambda0 = float(key, value)?,
            "train.beta0" => t.beta0 = float(key, value)?,
            "train.r" | "train.min_ratio" => t.min_ratio = float(key, value)?,
            "train.epsilon" => t.epsilon = float(key, value)?,
            "train.lambda_feat" => t.lambda_feat = float(key, value)?,
            "train.seed" => t.seed = uint(key, value)? as u64,
            "train.logit_scale_init" => t.logit_scale_init = float(key, value)?,
            "train.logit_scale_max" => t.logit_scale_max = float(key, value)?,
            "train.adam_beta1" => t.adam_beta1 = float(key, value)?,
            "train.adam_beta2" => t.adam_beta2 = float(key, value)?,
            "train.weight_decay" => t.weight_decay = float(key, value)?,
            "train.grad_clip" => {
                let v = float(key, value)?;
                t.grad_clip = (v > 0.0).then_some(v);
            }
            "train.transition_fraction" => t.transition_fraction = float(key, value)?,
            "train.student_dim" => t.student_dim = uint(key, value)?,
            "train.warm_start_steps" => t.warm_start_steps = uint(key, value)?,
            "train.warm_start_learning_rate" => t.warm_start_learning_rate = float(key, value)?,
            "augment.enabled" => t.augment.enabled = boolean(key, value)?,
            "augment.max_angle" => t.augment.max_angle = float(key, value)?,
            "augment.scale_jitter" => t.augment.scale_jitter = float(key, value)?,
            "augment.noise_sigma" => t.augment.noise_sigma = float(key, value)?,
            "eval.chart_half_width" => t.eval.chart_half_width = float(key, value)?,
            "eval.geometry" => t.eval.geometry = boolean(key, value)?,
            "corpus.num_classes" => c.num_classes = uint(key, value)?,
            "corpus.confusable_pairs" => c.confusable_pairs = pairs(key, &string(key, value)?)?,
            "corpus.samples_per_class" => c.samples_per_class = uint(key, value)?,
            "corpus.ambient_dim" => c.ambient_dim = uint(key, value)?,
            "corpus.signal_dim" => c.signal_dim = uint(key, value)?,
            "corpus.noise_sigma" => c.noise_sigma = float(key, value)?,
            "corpus.confusion_strength" => c.confusion_strength = float(key, value)?,
            "corpus.measure_sigma" => c.measure_sigma = float(key, value)?,
            "corpus.seed" => c.seed = uint(key, value)? as u64,
            "teacher.hidden_dim" => {
                let v = uint(key, value)?;
                h.image.hidden_dim = v;
                h.text.hidden_dim = v;
            }
            "teacher.output_dim" => {
                let v = uint(key, value)?;
                h.image.output_dim = v;
                h.text.output_dim = v;
            }
            "teacher.steps" => h.steps = uint(key, value)?,
            "teacher.batch_size" => h.batch_size = uint(key, value)?,
            "teacher.learning_rate" => h.learning_rate = float(key, value)?,
            "teacher.f1_floor" => h.f1_floor = float(key, value)?,
            "teacher.logit_scale_init" => h.logit_scale_init = float(key, value)?,
            "teacher.logit_scale_max" => h.logit_scale_max = float(key, value)?,
            "teacher.caption_merge" => h.caption_merge = float(key, value)?,
            "teacher.seed" => h.seed = uint(key, value)? as u64,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Keeps encoder input sizes in line with the corpus and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.teacher.image.input_dim = self.corpus.ambient_dim;
        self.teacher.text.input_dim = self.corpus.ambient_dim;
        self.corpus.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn type_error(key: &str, want: &str, value: &Value) -> Error {
    Error::Config(format!("{key}: expected {want}, got {}", value.type_str()))
}

fn float(key: &str, value: &Value) -> Result<f64> {
    match value {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn uint(key: &str, value: &Value) -> Result<usize> {
    match value {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(type_error(key, "a non-negative integer", other)),
    }
}

fn boolean(key: &str, value: &Value) -> Result<bool> {
    value
        .as_bool()
        .ok_or_else(|| type_error(key, "a boolean", value))
}

fn string(key: &str, value: &Value) -> Result<String> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| type_error(key, "a string", value))
}

/// Parses `"0-1,0-2"` into index pairs.
fn pairs(key: &str, s: &str) -> Result<Vec<(usize, usize)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("{key}: pair `{p}` is not `a-b`")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: bad class index `{x}`")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_keys_and_comments() {
        let mut c = ExperimentConfig::benchmark();
        c.apply_toml(
            "# a comment\ntrain.mode = \"static\"\ntrain.r = -0.5 # trailing\ntrain.epochs = 3\n\
             corpus.confusable_pairs = \"0-1, 2-3\"\naugment.enabled = false\n",
        )
        .unwrap();
        assert_eq!(c.train.mode, Mode::Static);
        assert_eq!(c.train.min_ratio, -0.5);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.corpus.confusable_pairs, vec![(0, 1), (2, 3)]);
        assert!(!c.train.augment.enabled);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = ExperimentConfig::benchmark();
        match c.apply_toml("train.bete0 = 2.0") {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "train.bete0"),
            other => panic!("expected unknown key, got {other:?}"),
        }
        assert!(matches!(
            c.apply_override("bete0", "2"),
            Err(Error::UnknownKey(_))
        ));
    }

    #[test]
    fn type_errors() {
        let mut c = ExperimentConfig::benchmark();
        assert!(matches!(
            c.apply_toml("train.epochs = \"many\""),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            c.apply_toml("train.epochs = -1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            c.apply_toml("train.mode = \"bogus\""),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            c.apply_toml("train.mode = "),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overrides_take_literals_or_strings() {
        let mut c = ExperimentConfig::benchmark();
        c.apply_override("train.mode", "no_kd").unwrap();
        c.apply_override("train.beta0", "3").unwrap();
        c.apply_override("train.r", "-0.25").unwrap();
        assert_eq!(c.train.mode, Mode::NoKd);
        assert_eq!(c.train.beta0, 3.0);
        assert_eq!(c.train.min_ratio, -0.25);
    }

    #[test]
    fn resolve_tracks_corpus_dim() {
        let mut c = ExperimentConfig::benchmark();
        c.apply_override("corpus.ambient_dim", "24").unwrap();
        let c = c.resolve().unwrap();
        assert_eq!(c.teacher.image.input_dim, 24);
        let mut bad = ExperimentConfig::benchmark();
        bad.apply_override("train.mode", "coupled").unwrap();
        bad.apply_override("train.r", "0.5").unwrap();
        assert!(bad.resolve().is_err());
    }
}
