//! One complete run: corpus, teacher, student, and every artifact on disk.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::info;

use super::config::ExperimentConfig;
use super::embfile::EmbeddingFile;
use super::manifest::{RunManifest, RunStatus};
use super::metric_log::{to_exact_json, write_metric_log};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::GeometryReport;
use crate::train::evaluate::class_chart;
use crate::train::{
    generate_corpus, pretrain_teacher, train_student, Corpus, Teacher, TrainOutcome,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.rkde";
pub const PROMPTS_FILE: &str = "prompts.rkde";
pub const MEASURES_FILE: &str = "measures.json";
pub const CHART_FILE: &str = "chart.json";
pub const EVAL_FILE: &str = "eval.json";
pub const GEOMETRY_FILE: &str = "geometry.json";

/// Teachers keyed by the corpus and teacher settings that produced them.
#[derive(Debug, Default)]
pub struct TeacherCache {
    teachers: HashMap<String, Teacher>,
}

impl TeacherCache {
    pub fn get_or_train(&mut self, config: &ExperimentConfig, corpus: &Corpus) -> Result<&Teacher> {
        let key = serde_json::to_string(&(&config.corpus, &config.teacher))?;
        if !self.teachers.contains_key(&key) {
            info!("pretraining teacher for corpus seed {}", config.corpus.seed);
            let teacher = pretrain_teacher(corpus, &config.teacher)?;
            self.teachers.insert(key.clone(), teacher);
        }
        Ok(&self.teachers[&key])
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub report: EvalReport,
    pub geometry: Option<GeometryReport>,
    pub outcome: TrainOutcome,
}

pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunResult> {
    run_experiment_cached(config, out_dir, &mut TeacherCache::default())
}

/// Runs and writes all artifacts to `out_dir`. On failure the manifest is still written, with
/// the error recorded, before the error is returned.
pub fn run_experiment_cached(
    config: &ExperimentConfig,
    out_dir: &Path,
    cache: &mut TeacherCache,
) -> Result<RunResult> {
    let config = config.clone().resolve()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new(config.clone())?;
    match run_inner(&config, out_dir, cache, &mut manifest) {
        Ok(result) => Ok(result),
        Err(e) => {
            manifest.status = match e {
                Error::Divergence { .. } => RunStatus::Diverged,
                _ => RunStatus::Failed,
            };
            manifest.error = Some(e.to_string());
            manifest.write(out_dir.join(MANIFEST_FILE))?;
            Err(e)
        }
    }
}

fn run_inner(
    config: &ExperimentConfig,
    out_dir: &Path,
    cache: &mut TeacherCache,
    manifest: &mut RunManifest,
) -> Result<RunResult> {
    let corpus = generate_corpus(&config.corpus)?;
    let teacher = if config.train.mode.uses_teacher() {
        let t = cache.get_or_train(config, &corpus)?;
        manifest.teacher_hash = Some(t.parameter_hash());
        manifest.teacher_parameters = Some(t.model().parameter_count());
        Some(t)
    } else {
        None
    };
    info!("training student, mode {}", config.train.mode.name());
    let outcome = train_student(&config.train, &corpus, teacher)?;
    manifest.steps_per_epoch = Some(outcome.steps_per_epoch);
    manifest.student_parameters = Some(outcome.student.parameter_count());

    let mut write = |name: &str, bytes: Vec<u8>| -> Result<()> {
        fs::write(out_dir.join(name), &bytes)?;
        manifest.record_output(name, &bytes);
        Ok(())
    };
    let mut log = Vec::new();
    write_metric_log(&mut log, &outcome.log)?;
    write(METRICS_FILE, log)?;

    let img = outcome.student.image.embed(&corpus.eval.images)?;
    write(
        EMBEDDINGS_FILE,
        EmbeddingFile::from_array(img.values(), Some(&corpus.eval.labels))?.to_bytes(),
    )?;
    let prompts = outcome.student.text.embed(&corpus.class_texts)?;
    let prompt_labels: Vec<u32> = (0..corpus.spec.num_classes as u32).collect();
    write(
        PROMPTS_FILE,
        EmbeddingFile::from_array(prompts.values(), Some(&prompt_labels))?.to_bytes(),
    )?;
    write(MEASURES_FILE, json_line(&corpus.eval.measures)?)?;
    let chart = class_chart(corpus.spec.num_classes, config.train.eval.chart_half_width)?;
    write(CHART_FILE, json_line(&chart)?)?;

    let last = outcome.final_eval();
    write(EVAL_FILE, json_line(&last.report)?)?;
    if let Some(g) = &last.geometry {
        write(GEOMETRY_FILE, json_line(g)?)?;
    }
    manifest.status = RunStatus::Completed;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(RunResult {
        manifest: manifest.clone(),
        report: last.report.clone(),
        geometry: last.geometry,
        outcome,
    })
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = to_exact_json(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Re-runs the configuration recorded in a manifest into `out_dir`.
pub fn rerun_manifest(manifest_path: &Path, out_dir: &Path) -> Result<RunResult> {
    let manifest = RunManifest::read(manifest_path)?;
    run_experiment(&manifest.config, out_dir)
}
