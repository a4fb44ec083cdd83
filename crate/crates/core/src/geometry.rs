//! Embedding-geometry diagnostics: cluster quality, class cosines, uniformity and
//! spectral dimensionality of a labeled embedding set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Fraction of spectral mass that [`rank95`] must cover.
pub const RANK_VARIANCE_FRACTION: f64 = 0.95;

/// Default temperature for [`uniformity`].
pub const UNIFORMITY_T: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub d_eff: f64,
    pub rank95: usize,
    pub silhouette: f64,
    pub intra_cosine: f64,
    pub inter_cosine: f64,
    pub uniformity: f64,
}

/// Computes every field of [`GeometryReport`] for a normalized labeled set.
pub fn geometry_report(emb: &EmbeddingMatrix, labels: &[u32]) -> Result<GeometryReport> {
    let (intra_cosine, inter_cosine) = class_cosine(emb, labels)?;
    let spectrum = covariance_spectrum(emb)?;
    Ok(GeometryReport {
        d_eff: participation_ratio(&spectrum)?,
        rank95: rank_for_fraction(&spectrum, RANK_VARIANCE_FRACTION)?,
        silhouette: silhouette_score(emb, labels)?,
        intra_cosine,
        inter_cosine,
        uniformity: uniformity(emb, UNIFORMITY_T)?,
    })
}

/// Groups row indices by label; requires at least two classes of at least two members.
fn class_members(n: usize, labels: &[u32]) -> Result<BTreeMap<u32, Vec<usize>>> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(invalid("labels", "need at least two classes"));
    }
    if let Some((l, _)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(invalid("labels", format!("class {l} is a singleton")));
    }
    Ok(groups)
}

fn euclidean(emb: &Array2<f64>, i: usize, j: usize) -> f64 {
    emb.row(i)
        .iter()
        .zip(emb.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette_score(emb: &EmbeddingMatrix, labels: &[u32]) -> Result<f64> {
    let groups = class_members(emb.rows(), labels)?;
    let x = emb.values();
    let n = emb.rows();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (&l, members) in &groups {
            let sum: f64 = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| euclidean(x, i, j))
                .sum();
            if l == own {
                a = sum / (members.len() - 1) as f64;
            } else {
                b = b.min(sum / members.len() as f64);
            }
        }
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// Mean pairwise cosine within classes and across classes.
pub fn class_cosine(emb: &EmbeddingMatrix, labels: &[u32]) -> Result<(f64, f64)> {
    emb.require_normalized("emb")?;
    class_members(emb.rows(), labels)?;
    let gram = emb.values().dot(&emb.values().t());
    let n = emb.rows();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                intra += gram[[i, j]];
                n_intra += 1;
            } else {
                inter += gram[[i, j]];
                n_inter += 1;
            }
        }
    }
    Ok((
        (intra / n_intra as f64).clamp(-1.0, 1.0),
        (inter / n_inter as f64).clamp(-1.0, 1.0),
    ))
}

/// `log mean_{i<j} exp(-t * |x_i - x_j|^2)`.
pub fn uniformity(emb: &EmbeddingMatrix, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    let n = emb.rows();
    if n < 2 {
        return Err(invalid("emb", "uniformity needs at least two samples"));
    }
    let x = emb.values();
    let mut exponents = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(x, i, j);
            exponents.push(-t * d * d);
        }
    }
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = exponents.iter().map(|e| (e - max).exp()).sum::<f64>() / exponents.len() as f64;
    Ok((max + mean.ln()).min(0.0))
}

/// Eigenvalues of the centered covariance, sorted descending and clipped at zero.
pub fn covariance_spectrum(emb: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let n = emb.rows();
    if n < 2 {
        return Err(invalid("emb", "spectrum needs at least two samples"));
    }
    let mean = emb.values().mean_axis(Axis(0)).expect("non-empty");
    let centered = emb.values() - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let d = cov.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let mut eig: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig.iter().sum::<f64>() <= 0.0 {
        return Err(invalid("emb", "covariance is zero (all points identical)"));
    }
    Ok(eig)
}

/// Participation ratio `(sum l)^2 / sum l^2` of a nonnegative spectrum.
pub fn participation_ratio(spectrum: &[f64]) -> Result<f64> {
    let s: f64 = spectrum.iter().sum();
    let s2: f64 = spectrum.iter().map(|l| l * l).sum();
    if s <= 0.0 || s2 <= 0.0 {
        return Err(invalid("spectrum", "zero spectrum"));
    }
    Ok((s * s / s2).clamp(1.0, spectrum.len() as f64))
}

/// Smallest `k` such that the top-`k` entries of a descending spectrum hold `fraction` of its mass.
pub fn rank_for_fraction(spectrum: &[f64], fraction: f64) -> Result<usize> {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return Err(invalid("spectrum", "zero spectrum"));
    }
    let mut acc = 0.0;
    for (k, &l) in spectrum.iter().enumerate() {
        acc += l;
        // relative slack absorbs rounding when the target is hit exactly
        if acc >= fraction * total * (1.0 - 1e-12) {
            return Ok(k + 1);
        }
    }
    Ok(spectrum.len())
}

/// Effective dimensionality: participation ratio of the centered covariance spectrum.
pub fn effective_dim(emb: &EmbeddingMatrix) -> Result<f64> {
    participation_ratio(&covariance_spectrum(emb)?)
}

/// Number of leading spectral components covering 95% of the variance.
pub fn rank95(emb: &EmbeddingMatrix) -> Result<usize> {
    let k = rank_for_fraction(&covariance_spectrum(emb)?, RANK_VARIANCE_FRACTION)?;
    Ok(k.min(emb.rows()))
}
