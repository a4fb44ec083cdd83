use std::fs;

use rkd_core::io::config::ExperimentConfig;
use rkd_core::io::embfile::EmbeddingFile;
use rkd_core::io::experiment::{run_experiment, EMBEDDINGS_FILE, MANIFEST_FILE, METRICS_FILE};
use rkd_core::io::manifest::{sha256_hex, RunManifest, RunStatus};
use rkd_core::io::metric_log::read_metric_log;
use rkd_core::io::offline::{evaluate_embeddings, geometry_of_file, load_embeddings, load_prompts};
use rkd_core::train::Mode;
use tempfile::TempDir;

fn quick(mode: Mode) -> ExperimentConfig {
    let mut c = ExperimentConfig::benchmark();
    c.train.mode = mode;
    c.train.epochs = 2;
    c.corpus.samples_per_class = 32;
    c.teacher.steps = 400;
    c
}

#[test]
fn manifest_hashes_every_output() {
    let tmp = TempDir::new().unwrap();
    let result = run_experiment(&quick(Mode::Selective), tmp.path()).unwrap();
    let manifest = RunManifest::read(tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, result.manifest);
    assert_eq!(manifest.status, RunStatus::Completed);
    assert!(manifest.teacher_hash.is_some());
    assert!(manifest.schedule.is_some());
    assert_eq!(manifest.outputs.len(), 7);
    for (name, hash) in &manifest.outputs {
        assert_eq!(
            &sha256_hex(&fs::read(tmp.path().join(name)).unwrap()),
            hash,
            "{name}"
        );
    }
    let log = read_metric_log(&fs::read(tmp.path().join(METRICS_FILE)).unwrap()[..]).unwrap();
    assert_eq!(log.len(), 2 * manifest.steps_per_epoch.unwrap());
    assert_eq!(log.iter().filter(|r| r.eval.is_some()).count(), 2);
}

#[test]
fn written_embeddings_reproduce_the_final_scores() {
    let tmp = TempDir::new().unwrap();
    let config = quick(Mode::NoKd);
    let result = run_experiment(&config, tmp.path()).unwrap();
    assert!(result.manifest.teacher_hash.is_none());

    let file = EmbeddingFile::read(tmp.path().join(EMBEDDINGS_FILE)).unwrap();
    assert_eq!(file.count as usize, 8 * 32);
    assert_eq!(file.dim as usize, config.train.student_dim);

    let (img, labels) = load_embeddings(&tmp.path().join(EMBEDDINGS_FILE)).unwrap();
    let prompts = load_prompts(&tmp.path().join("prompts.rkde")).unwrap();
    let measures: Vec<f64> =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("measures.json")).unwrap())
            .unwrap();
    let chart =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("chart.json")).unwrap()).unwrap();
    let fine = config.corpus.confusable_classes();
    let offline =
        evaluate_embeddings(&img, &labels, &prompts, &fine, Some((&measures, &chart))).unwrap();
    // Files hold f32, so agreement is up to single-precision rounding of the embeddings.
    assert!((offline.f1_macro - result.report.f1_macro).abs() < 0.01);
    assert!((offline.validity_rate.unwrap() - result.report.validity_rate).abs() < 0.01);

    let g = geometry_of_file(&tmp.path().join(EMBEDDINGS_FILE)).unwrap();
    let live = result.geometry.unwrap();
    assert!((g.silhouette - live.silhouette).abs() < 1e-5);
    assert_eq!(g.rank95, live.rank95);
}

#[test]
fn invalid_configuration_fails_before_training() {
    let tmp = TempDir::new().unwrap();
    let mut c = quick(Mode::Coupled);
    c.train.min_ratio = 0.5;
    assert!(run_experiment(&c, tmp.path()).is_err());
}
