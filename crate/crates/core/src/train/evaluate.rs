//! Zero-shot evaluation and geometry of a dual encoder on a corpus eval split.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Dataset};
use super::model::DualEncoder;
use crate::error::Result;
use crate::eval::{
    avg_selection, f1_all, macro_f1, validity_rate, zero_shot_classify, EvalReport, F1Scores,
    PercentileChart, PromptBank,
};
use crate::geometry::{geometry_report, GeometryReport};
use crate::matrix::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Half-width of every band of the synthetic percentile chart, in class-level units.
    pub chart_half_width: f64,
    /// Compute the geometry panel at every evaluation.
    pub geometry: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chart_half_width: 1.0,
            geometry: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub report: EvalReport,
    /// Macro-F1 among the non-confusable classes only.
    pub f1_coarse: f64,
    /// Macro-F1 among the confusable classes only.
    pub f1_fine: f64,
    pub geometry: Option<GeometryReport>,
    /// Geometry restricted to samples of the confusable classes.
    pub geometry_confusable: Option<GeometryReport>,
}

/// Synthetic chart with one band per class level `0..K`.
pub fn class_chart(num_classes: usize, half_width: f64) -> Result<PercentileChart> {
    let centers: Vec<f64> = (0..num_classes).map(|k| k as f64).collect();
    PercentileChart::symmetric(&centers, half_width)
}

pub fn prompt_bank(model: &DualEncoder, corpus: &Corpus) -> Result<PromptBank> {
    PromptBank::unnamed(model.text.embed(&corpus.class_texts)?)
}

/// Zero-shot macro-F1 of `data` restricted to `classes`, matching only against those prompts.
pub fn restricted_f1(
    model: &DualEncoder,
    corpus: &Corpus,
    data: &Dataset,
    classes: &[u32],
) -> Result<f64> {
    let img = model.image.embed(&data.images)?;
    let prompts = model.text.embed(&corpus.class_texts)?;
    subset_f1(
        &img,
        &data.labels,
        &prompts,
        classes,
        corpus.spec.num_classes,
    )
}

/// Macro-F1 over samples of `classes`, classified among those classes' prompts only.
pub fn subset_f1(
    img: &EmbeddingMatrix,
    labels: &[u32],
    prompts: &EmbeddingMatrix,
    classes: &[u32],
    num_classes: usize,
) -> Result<f64> {
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| classes.contains(&labels[i]))
        .collect();
    if classes.is_empty() || rows.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
    let bank = PromptBank::unnamed(EmbeddingMatrix::normalized(
        prompts.values().select(Axis(0), &idx),
    )?)?;
    let sub = EmbeddingMatrix::normalized(img.values().select(Axis(0), &rows))?;
    let local = zero_shot_classify(&sub, &bank)?.predictions;
    let preds: Vec<u32> = local.iter().map(|&p| classes[p as usize]).collect();
    let sub_labels: Vec<u32> = rows.iter().map(|&i| labels[i]).collect();
    Ok(macro_f1(&preds, &sub_labels, num_classes)?.macro_f1)
}

/// Zero-shot scores of image embeddings against one prompt per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotBreakdown {
    pub predictions: Vec<u32>,
    pub all: F1Scores,
    pub f1_coarse: f64,
    pub f1_fine: f64,
    /// Class-count weighted mean of the coarse and fine scores.
    pub f1_all: f64,
}

/// `fine` lists the confusable classes; every other class counts as coarse.
pub fn zero_shot_breakdown(
    img: &EmbeddingMatrix,
    labels: &[u32],
    prompts: &EmbeddingMatrix,
    fine: &[u32],
) -> Result<ZeroShotBreakdown> {
    let k = prompts.rows();
    let coarse: Vec<u32> = (0..k as u32).filter(|c| !fine.contains(c)).collect();
    let bank = PromptBank::unnamed(prompts.clone())?;
    let predictions = zero_shot_classify(img, &bank)?.predictions;
    let all = macro_f1(&predictions, labels, k)?;
    let f1_coarse = subset_f1(img, labels, prompts, &coarse, k)?;
    let f1_fine = subset_f1(img, labels, prompts, fine, k)?;
    let combined = match (coarse.len(), fine.len()) {
        (5, 3) => f1_all(f1_coarse, f1_fine)?,
        (_, 0) => f1_coarse,
        (0, _) => f1_fine,
        (c, f) => (c as f64 * f1_coarse + f as f64 * f1_fine) / (c + f) as f64,
    };
    Ok(ZeroShotBreakdown {
        predictions,
        all,
        f1_coarse,
        f1_fine,
        f1_all: combined,
    })
}

pub fn evaluate_model(
    model: &DualEncoder,
    corpus: &Corpus,
    config: &EvalConfig,
) -> Result<ModelEval> {
    let k = corpus.spec.num_classes;
    let data = &corpus.eval;
    let fine = corpus.spec.confusable_classes();

    let img = model.image.embed(&data.images)?;
    let prompts = model.text.embed(&corpus.class_texts)?;
    let zs = zero_shot_breakdown(&img, &data.labels, &prompts, &fine)?;
    let validity = validity_rate(
        &zs.predictions,
        &data.measures,
        &class_chart(k, config.chart_half_width)?,
    )?
    .rate;
    let report = EvalReport {
        f1_per_class: zs.all.per_class,
        f1_macro: zs.all.macro_f1,
        f1_all: zs.f1_all,
        validity_rate: validity,
        avg_selection: avg_selection(zs.f1_all, 100.0 * validity)?,
    };

    let (geometry, geometry_confusable) = if config.geometry {
        let rows: Vec<usize> = (0..data.len())
            .filter(|&i| fine.contains(&data.labels[i]))
            .collect();
        let conf = if fine.len() >= 2 {
            let sub = EmbeddingMatrix::normalized(img.values().select(Axis(0), &rows))?;
            let labels: Vec<u32> = rows.iter().map(|&i| data.labels[i]).collect();
            Some(geometry_report(&sub, &labels)?)
        } else {
            None
        };
        (Some(geometry_report(&img, &data.labels)?), conf)
    } else {
        (None, None)
    };
    Ok(ModelEval {
        report,
        f1_coarse: zs.f1_coarse,
        f1_fine: zs.f1_fine,
        geometry,
        geometry_confusable,
    })
}

/// Image embeddings of the eval split.
pub fn eval_embeddings(model: &DualEncoder, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    model.image.embed(&corpus.eval.images)
}
