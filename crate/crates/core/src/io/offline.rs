//! Evaluation and geometry of embedding files written by earlier runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embfile::EmbeddingFile;
use crate::error::{Error, Result};
use crate::eval::{avg_selection, validity_rate, PercentileChart};
use crate::geometry::{geometry_report, GeometryReport};
use crate::matrix::EmbeddingMatrix;
use crate::train::evaluate::zero_shot_breakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineEval {
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
    pub f1_coarse: f64,
    pub f1_fine: f64,
    pub f1_all: f64,
    /// Absent unless both measures and a chart were given.
    pub validity_rate: Option<f64>,
    pub avg_selection: Option<f64>,
}

/// Rows of a labeled embedding file, renormalized in double precision.
pub fn load_embeddings(path: &Path) -> Result<(EmbeddingMatrix, Vec<u32>)> {
    let file = EmbeddingFile::read(path)?;
    let labels = file
        .labels
        .clone()
        .ok_or_else(|| Error::Format(format!("{} carries no labels", path.display())))?;
    Ok((EmbeddingMatrix::normalized(file.to_array())?, labels))
}

/// Prompt rows, one per class, in class order.
pub fn load_prompts(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::normalized(EmbeddingFile::read(path)?.to_array())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Zero-shot scores of labeled image embeddings against class prompts. Validity needs the
/// per-sample measures and a chart with one band per class.
pub fn evaluate_embeddings(
    img: &EmbeddingMatrix,
    labels: &[u32],
    prompts: &EmbeddingMatrix,
    fine: &[u32],
    validity: Option<(&[f64], &PercentileChart)>,
) -> Result<OfflineEval> {
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= prompts.rows()) {
        return Err(Error::Format(format!(
            "label {bad} has no prompt ({} prompts)",
            prompts.rows()
        )));
    }
    let zs = zero_shot_breakdown(img, labels, prompts, fine)?;
    let validity = validity
        .map(|(measures, chart)| validity_rate(&zs.predictions, measures, chart))
        .transpose()?
        .map(|v| v.rate);
    let avg = validity
        .map(|v| avg_selection(zs.f1_all, 100.0 * v))
        .transpose()?;
    Ok(OfflineEval {
        f1_per_class: zs.all.per_class,
        f1_macro: zs.all.macro_f1,
        f1_coarse: zs.f1_coarse,
        f1_fine: zs.f1_fine,
        f1_all: zs.f1_all,
        validity_rate: validity,
        avg_selection: avg,
    })
}

pub fn geometry_of_file(path: &Path) -> Result<GeometryReport> {
    let (emb, labels) = load_embeddings(path)?;
    geometry_report(&emb, &labels)
}
