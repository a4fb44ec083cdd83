//! Dense matrix newtypes shared by the losses, trainer and diagnostics.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row norms must be within this distance of 1 for a matrix to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// `N x d` matrix of embeddings, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Wraps raw values without normalizing them.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_shape_and_finite(&values, "embedding matrix")?;
        let normalized = rows_are_unit(values.view());
        Ok(Self { values, normalized })
    }

    /// Projects every row onto the unit sphere.
    pub fn normalized(mut values: Array2<f64>) -> Result<Self> {
        check_shape_and_finite(&values, "embedding matrix")?;
        for (i, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(invalid("values", format!("row {i} has zero norm")));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// True when every row has unit L2 norm within [`NORM_TOLERANCE`].
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub(crate) fn require_normalized(&self, name: &'static str) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(invalid(name, "rows must be L2-normalized"))
        }
    }
}

/// Square matrix of scaled cosine similarities between an image batch and a text batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    logits: Array2<f64>,
    scale: f64,
}

impl SimilarityMatrix {
    pub fn new(logits: Array2<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(
                "scale",
                format!("must be positive and finite, got {scale}"),
            ));
        }
        if logits.nrows() != logits.ncols() || logits.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "similarity matrix must be square and non-empty, got {:?}",
                logits.dim()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity logits"));
        }
        Ok(Self { logits, scale })
    }

    /// Logits without any scale bookkeeping (scale 1).
    pub fn from_logits(logits: Array2<f64>) -> Result<Self> {
        Self::new(logits, 1.0)
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn size(&self) -> usize {
        self.logits.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

/// Row-stochastic matrix obtained from a similarity matrix in one retrieval direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDistributions {
    pub probs: Array2<f64>,
    pub direction: Direction,
    pub softening: f64,
}

impl RowDistributions {
    /// Softmax over rows (image to text) or columns (text to image) of `logits / softening`.
    ///
    /// For `TextToImage`, row `j` of the result is the distribution of text `j` over images.
    pub fn from_similarity(
        sim: &SimilarityMatrix,
        direction: Direction,
        softening: f64,
    ) -> Result<Self> {
        if !(softening > 0.0 && softening.is_finite()) {
            return Err(invalid(
                "softening",
                format!("must be positive, got {softening}"),
            ));
        }
        let view = oriented(sim.logits().view(), direction);
        let probs = log_softmax_rows(view, softening).mapv(f64::exp);
        Ok(Self {
            probs,
            direction,
            softening,
        })
    }
}

pub(crate) fn oriented(m: ArrayView2<'_, f64>, direction: Direction) -> ArrayView2<'_, f64> {
    match direction {
        Direction::ImageToText => m,
        Direction::TextToImage => m.reversed_axes(),
    }
}

/// Row-wise log-softmax of `m / temperature` with max subtraction.
pub(crate) fn log_softmax_rows(m: ArrayView2<'_, f64>, temperature: f64) -> Array2<f64> {
    let mut out = m.mapv(|v| v / temperature);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("ragged rows".into()));
    }
    Array2::from_shape_vec((n, d), rows.iter().flatten().copied().collect())
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

fn check_shape_and_finite(values: &Array2<f64>, what: &'static str) -> Result<()> {
    if values.nrows() == 0 || values.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{what} needs at least one row and one column, got {:?}",
            values.dim()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn rows_are_unit(values: ArrayView2<'_, f64>) -> bool {
    values
        .axis_iter(Axis(0))
        .all(|row| (row.dot(&row).sqrt() - 1.0).abs() <= NORM_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_flag_tracks_row_norms() {
        let raw = EmbeddingMatrix::new(array![[3.0, 4.0]]).unwrap();
        assert!(!raw.is_normalized());
        let unit = EmbeddingMatrix::normalized(array![[3.0, 4.0]]).unwrap();
        assert!(unit.is_normalized());
        assert!((unit.values()[[0, 0]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_nonfinite_and_zero_rows() {
        assert!(EmbeddingMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(EmbeddingMatrix::new(array![[f64::NAN]]).is_err());
        assert!(EmbeddingMatrix::normalized(array![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn similarity_matrix_validates() {
        assert!(SimilarityMatrix::new(array![[1.0, 2.0]], 1.0).is_err());
        assert!(SimilarityMatrix::new(array![[1.0]], 0.0).is_err());
        assert!(SimilarityMatrix::new(array![[f64::INFINITY]], 1.0).is_err());
    }

    #[test]
    fn row_distributions_are_stochastic_in_both_directions() {
        let sim = SimilarityMatrix::from_logits(array![
            [1.0, -2.0, 0.5],
            [30.0, 0.0, -30.0],
            [0.1, 0.2, 0.3]
        ])
        .unwrap();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let d = RowDistributions::from_similarity(&sim, dir, 5.0).unwrap();
            for row in d.probs.axis_iter(Axis(0)) {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }
}
