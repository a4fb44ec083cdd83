//! Zero-shot classification and the evaluation aggregates used for run selection.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// One normalized text-side embedding per class.
#[derive(Debug, Clone)]
pub struct PromptBank {
    pub class_names: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl PromptBank {
    pub fn new(class_names: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        embeddings.require_normalized("prompt embeddings")?;
        if class_names.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} class names for {} prompt embeddings",
                class_names.len(),
                embeddings.rows()
            )));
        }
        Ok(Self {
            class_names,
            embeddings,
        })
    }

    /// Averages several template embeddings per class and renormalizes.
    pub fn from_templates(class_names: Vec<String>, templates: &[EmbeddingMatrix]) -> Result<Self> {
        let first = templates
            .first()
            .ok_or_else(|| invalid("templates", "no templates"))?;
        let mut sum = Array2::<f64>::zeros(first.values().raw_dim());
        for t in templates {
            if t.values().dim() != sum.dim() {
                return Err(Error::DimensionMismatch(
                    "template banks differ in shape".into(),
                ));
            }
            sum += t.values();
        }
        Self::new(class_names, EmbeddingMatrix::normalized(sum)?)
    }

    /// Bank with class names `class_0 .. class_{K-1}`.
    pub fn unnamed(embeddings: EmbeddingMatrix) -> Result<Self> {
        let names = (0..embeddings.rows())
            .map(|k| format!("class_{k}"))
            .collect();
        Self::new(names, embeddings)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShot {
    pub predictions: Vec<u32>,
    /// Rows whose maximum similarity was shared by more than one class.
    pub ties: usize,
}

/// Nearest prompt by cosine similarity; ties go to the lowest class index.
pub fn zero_shot_classify(img: &EmbeddingMatrix, bank: &PromptBank) -> Result<ZeroShot> {
    if bank.is_empty() {
        return Err(invalid("bank", "empty prompt bank"));
    }
    img.require_normalized("img")?;
    if img.dim() != bank.embeddings.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image dim {} vs prompt dim {}",
            img.dim(),
            bank.embeddings.dim()
        )));
    }
    let scores = img.values().dot(&bank.embeddings.values().t());
    Ok(argmax_rows(&scores))
}

pub(crate) fn argmax_rows(scores: &Array2<f64>) -> ZeroShot {
    let mut predictions = Vec::with_capacity(scores.nrows());
    let mut ties = 0;
    for row in scores.axis_iter(Axis(0)) {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if row.iter().filter(|&&v| v == row[best]).count() > 1 {
            ties += 1;
        }
        predictions.push(best as u32);
    }
    if ties > 0 {
        log::debug!("zero-shot argmax: {ties} tied rows resolved to lowest index");
    }
    ZeroShot { predictions, ties }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Per-class F1 (0 when precision + recall = 0) and the unweighted mean over classes
/// that occur in `labels`.
pub fn macro_f1(preds: &[u32], labels: &[u32], num_classes: usize) -> Result<F1Scores> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels
        .iter()
        .chain(preds)
        .find(|&&l| l as usize >= num_classes)
    {
        return Err(invalid(
            "labels",
            format!("class {bad} out of range for {num_classes} classes"),
        ));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[l as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[l as usize] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if tp[k] == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .collect();
    let present: BTreeSet<u32> = labels.iter().copied().collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|&k| per_class[k as usize]).sum::<f64>() / present.len() as f64
    };
    Ok(F1Scores {
        per_class,
        macro_f1,
    })
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} not in [0, 1]")))
    }
}

/// Class-count weighted mean of a coarse 5-way F1 and a fine-grained 3-way F1.
pub fn f1_all(f1_5: f64, f1_3: f64) -> Result<f64> {
    check_unit("f1_5", f1_5)?;
    check_unit("f1_3", f1_3)?;
    Ok((5.0 * f1_5 + 3.0 * f1_3) / 8.0)
}

/// Run-selection heuristic `(f1_all + validity_percent / 100) / 2`. Not an evaluation metric.
pub fn avg_selection(f1_all: f64, validity_percent: f64) -> Result<f64> {
    check_unit("f1_all", f1_all)?;
    if !(0.0..=100.0).contains(&validity_percent) {
        return Err(invalid(
            "validity_percent",
            format!("{validity_percent} not in [0, 100]"),
        ));
    }
    Ok((f1_all + validity_percent / 100.0) / 2.0)
}

/// Reference band per ordered level: a measurement is plausible for a level when it
/// lies within `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileChart {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PercentileChart {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let chart = Self { lower, upper };
        chart.validate()?;
        Ok(chart)
    }

    /// Bins centered at `centers` with symmetric half-width.
    pub fn symmetric(centers: &[f64], half_width: f64) -> Result<Self> {
        Self::new(
            centers.iter().map(|c| c - half_width).collect(),
            centers.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(invalid(
                "chart",
                "lower/upper must be non-empty and equal length",
            ));
        }
        for (k, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l < u) {
                return Err(invalid(
                    "chart",
                    format!("bin {k}: lower {l} not below upper {u}"),
                ));
            }
        }
        let centers: Vec<f64> = (0..self.len()).map(|k| self.center(k)).collect();
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("chart", "bin centers must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.lower[bin] + self.upper[bin])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validity {
    pub rate: f64,
    pub flags: Vec<bool>,
}

/// Fraction of samples whose true measurement falls inside the band of the predicted bin.
pub fn validity_rate(
    predicted_bins: &[u32],
    true_measures: &[f64],
    chart: &PercentileChart,
) -> Result<Validity> {
    if predicted_bins.len() != true_measures.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} measures",
            predicted_bins.len(),
            true_measures.len()
        )));
    }
    let flags = predicted_bins
        .iter()
        .zip(true_measures)
        .map(|(&b, &m)| {
            let b = b as usize;
            if b >= chart.len() {
                return Err(invalid(
                    "predicted_bins",
                    format!("bin {b} out of range for {} bins", chart.len()),
                ));
            }
            Ok(chart.lower[b] <= m && m <= chart.upper[b])
        })
        .collect::<Result<Vec<bool>>>()?;
    let rate = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    Ok(Validity { rate, flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub f1_macro: f64,
    pub f1_all: f64,
    pub validity_rate: f64,
    pub avg_selection: f64,
}

/// Full evaluation result including per-class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
    pub f1_all: f64,
    pub validity_rate: f64,
    pub avg_selection: f64,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            f1_macro: self.f1_macro,
            f1_all: self.f1_all,
            validity_rate: self.validity_rate,
            avg_selection: self.avg_selection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub l2: f64,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            l2: 1e-3,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub macro_f1: f64,
    /// Only for two-class problems.
    pub auroc: Option<f64>,
    pub predictions: Vec<u32>,
}

/// Multinomial logistic regression on frozen normalized features, trained with full-batch
/// gradient descent; weights start at zero so the result is deterministic.
pub fn linear_probe(
    train_feats: &EmbeddingMatrix,
    train_labels: &[u32],
    test_feats: &EmbeddingMatrix,
    test_labels: &[u32],
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    train_feats.require_normalized("train_feats")?;
    test_feats.require_normalized("test_feats")?;
    if train_feats.rows() != train_labels.len() || test_feats.rows() != test_labels.len() {
        return Err(Error::DimensionMismatch(
            "features and labels differ in length".into(),
        ));
    }
    if train_feats.dim() != test_feats.dim() {
        return Err(Error::DimensionMismatch(
            "train/test feature dims differ".into(),
        ));
    }
    let classes: BTreeSet<u32> = train_labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(invalid("train_labels", "training set has a single class"));
    }
    let num_classes = 1 + *classes
        .iter()
        .chain(test_labels.iter())
        .max()
        .expect("non-empty") as usize;

    let x = train_feats.values();
    let n = x.nrows() as f64;
    let mut w = Array2::<f64>::zeros((x.ncols(), num_classes));
    let mut b = Array1::<f64>::zeros(num_classes);
    let mut onehot = Array2::<f64>::zeros((x.nrows(), num_classes));
    for (i, &l) in train_labels.iter().enumerate() {
        onehot[[i, l as usize]] = 1.0;
    }
    for _ in 0..config.iterations {
        let probs = softmax_rows(&(x.dot(&w) + &b));
        let delta = (probs - &onehot) / n;
        let grad_w = x.t().dot(&delta) + &w * config.l2;
        let grad_b = delta.sum_axis(Axis(0));
        w.scaled_add(-config.learning_rate, &grad_w);
        b.scaled_add(-config.learning_rate, &grad_b);
    }

    let test_scores = softmax_rows(&(test_feats.values().dot(&w) + &b));
    let predictions = argmax_rows(&test_scores).predictions;
    let f1 = macro_f1(&predictions, test_labels, num_classes)?;
    let auroc = if num_classes == 2 {
        let scores: Vec<f64> = test_scores.column(1).to_vec();
        let positives: Vec<bool> = test_labels.iter().map(|&l| l == 1).collect();
        auroc(&scores, &positives).ok()
    } else {
        None
    };
    Ok(ProbeResult {
        macro_f1: f1.macro_f1,
        auroc,
        predictions,
    })
}

fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    crate::matrix::log_softmax_rows(m.view(), 1.0).mapv(f64::exp)
}

/// Area under the ROC curve by the trapezoidal rule; tied scores form one ROC segment.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(invalid("positive", "AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}
