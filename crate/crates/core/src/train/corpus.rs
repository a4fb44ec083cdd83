//! Synthetic paired-modality corpus with planted inter-class confusions.
//!
//! Each class owns a prototype on the unit sphere of a low-dimensional signal space.
//! Classes joined by `confusable_pairs` have their prototypes pulled toward their
//! group mean, so they are harder to tell apart than the rest. Image and text vectors
//! are independent noisy views of the prototype, embedded into the ambient space by two
//! different random orthonormal maps.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub num_classes: usize,
    pub confusable_pairs: Vec<(usize, usize)>,
    pub samples_per_class: usize,
    pub ambient_dim: usize,
    pub signal_dim: usize,
    pub noise_sigma: f64,
    pub confusion_strength: f64,
    /// Spread of the per-sample scalar measurement around its class level.
    pub measure_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            confusable_pairs: vec![(0, 1), (0, 2), (1, 2)],
            samples_per_class: 256,
            ambient_dim: 32,
            signal_dim: 16,
            noise_sigma: 0.25,
            confusion_strength: 0.4,
            measure_sigma: 0.5,
            seed: 42,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "need at least two classes"));
        }
        if self.signal_dim == 0 || self.signal_dim > self.ambient_dim {
            return Err(invalid(
                "signal_dim",
                format!(
                    "must be in 1..={} (ambient_dim), got {}",
                    self.ambient_dim, self.signal_dim
                ),
            ));
        }
        if self.samples_per_class < 2 {
            return Err(invalid(
                "samples_per_class",
                "need at least two samples per class",
            ));
        }
        if let Some(&(a, b)) = self
            .confusable_pairs
            .iter()
            .find(|&&(a, b)| a >= self.num_classes || b >= self.num_classes || a == b)
        {
            return Err(invalid("confusable_pairs", format!("bad pair ({a}, {b})")));
        }
        if !(0.0..=1.0).contains(&self.confusion_strength) {
            return Err(invalid("confusion_strength", "must be in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.measure_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "noise levels must be nonnegative"));
        }
        Ok(())
    }

    /// Classes that appear in at least one confusable pair, ascending.
    pub fn confusable_classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self
            .confusable_pairs
            .iter()
            .flat_map(|&(a, b)| [a as u32, b as u32])
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn is_confusable_pair(&self, a: u32, b: u32) -> bool {
        let (a, b) = (a as usize, b as usize);
        self.confusable_pairs
            .iter()
            .any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b))
    }
}

/// One split of paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub texts: Array2<f64>,
    pub labels: Vec<u32>,
    /// Scalar measurement per sample, centered on its class level.
    pub measures: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose label is in `classes`, in original order.
    pub fn subset(&self, classes: &[u32]) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        Dataset {
            images: self.images.select(Axis(0), &idx),
            texts: self.texts.select(Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            measures: idx.iter().map(|&i| self.measures[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SyntheticCorpusSpec,
    /// `K x signal_dim`, unit rows.
    pub prototypes: Array2<f64>,
    /// Noise-free text vector of every class, used as the zero-shot prompt.
    pub class_texts: Array2<f64>,
    /// `ambient_dim x signal_dim` maps from signal space to each modality.
    pub image_basis: Array2<f64>,
    pub text_basis: Array2<f64>,
    pub train: Dataset,
    pub eval: Dataset,
}

impl Corpus {
    /// Fresh samples from the same generative process, `samples_per_class` per class.
    pub fn draw(&self, samples_per_class: usize, rng: &mut impl Rng) -> Dataset {
        sample_split(
            &self.spec,
            samples_per_class,
            &self.prototypes,
            &self.image_basis,
            &self.text_basis,
            rng,
        )
    }
}

pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = planted_prototypes(spec, &mut rng);
    let image_basis = orthonormal_columns(spec.ambient_dim, spec.signal_dim, &mut rng);
    let text_basis = orthonormal_columns(spec.ambient_dim, spec.signal_dim, &mut rng);
    let class_texts = prototypes.dot(&text_basis.t());

    let split = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        sample_split(
            spec,
            spec.samples_per_class,
            &prototypes,
            &image_basis,
            &text_basis,
            &mut rng,
        )
    };
    let train = split(1);
    let eval = split(2);
    Ok(Corpus {
        spec: spec.clone(),
        prototypes,
        class_texts,
        image_basis,
        text_basis,
        train,
        eval,
    })
}

/// Orthonormal class prototypes when `K <= signal_dim`, random unit vectors otherwise,
/// then confusable groups blended toward their group mean direction.
fn planted_prototypes(spec: &SyntheticCorpusSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let k = spec.num_classes;
    let m = spec.signal_dim;
    let base = if k <= m {
        orthonormal_columns(m, k, rng).reversed_axes()
    } else {
        let mut g = gaussian((k, m), rng);
        normalize_rows(&mut g);
        g
    };
    let mut protos = base.clone();
    for group in spec.confusable_groups() {
        let mut mean = Array1::<f64>::zeros(m);
        for &c in &group {
            mean += &base.row(c);
        }
        let len = mean.dot(&mean).sqrt();
        if len == 0.0 {
            continue;
        }
        mean /= len;
        for &c in &group {
            let blended =
                &base.row(c) * (1.0 - spec.confusion_strength) + &mean * spec.confusion_strength;
            protos.row_mut(c).assign(&blended);
        }
    }
    normalize_rows(&mut protos);
    protos
}

impl SyntheticCorpusSpec {
    /// Connected components of the confusable-pair graph.
    pub fn confusable_groups(&self) -> Vec<Vec<usize>> {
        let spec = self;
        let mut parent: Vec<usize> = (0..spec.num_classes).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for &(a, b) in &spec.confusable_pairs {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for c in 0..spec.num_classes {
            let r = find(&mut parent, c);
            groups.entry(r).or_default().push(c);
        }
        groups.into_values().filter(|g| g.len() > 1).collect()
    }
}

fn sample_split(
    spec: &SyntheticCorpusSpec,
    samples_per_class: usize,
    prototypes: &Array2<f64>,
    image_basis: &Array2<f64>,
    text_basis: &Array2<f64>,
    rng: &mut impl Rng,
) -> Dataset {
    let n = spec.num_classes * samples_per_class;
    let (d, m) = (spec.ambient_dim, spec.signal_dim);
    let mut images = Array2::zeros((n, d));
    let mut texts = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut measures = Vec::with_capacity(n);
    let sigma = spec.noise_sigma;
    for i in 0..n {
        let class = i % spec.num_classes;
        let proto = prototypes.row(class);
        for (basis, out) in [(image_basis, &mut images), (text_basis, &mut texts)] {
            let latent = &proto + &(gaussian_vec(m, rng) * sigma);
            let view = basis.dot(&latent) + gaussian_vec(d, rng) * (sigma / (d as f64).sqrt());
            out.row_mut(i).assign(&view);
        }
        labels.push(class as u32);
        let z: f64 = StandardNormal.sample(rng);
        measures.push(class as f64 + spec.measure_sigma * z);
    }
    Dataset {
        images,
        texts,
        labels,
        measures,
    }
}

pub(crate) fn gaussian(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

pub(crate) fn gaussian_vec(n: usize, rng: &mut impl Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let len = row.dot(&row).sqrt();
        if len > 0.0 {
            row /= len;
        }
    }
}

/// `rows x cols` matrix with orthonormal columns (modified Gram-Schmidt on a Gaussian draw).
pub(crate) fn orthonormal_columns(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    assert!(cols <= rows);
    let mut q = gaussian((rows, cols), rng);
    for j in 0..cols {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let prev = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &prev);
        }
        let len = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / len);
    }
    q.slice(s![.., ..cols]).to_owned()
}

/// Pairwise cosine between class prototypes.
pub fn prototype_cosines(corpus: &Corpus) -> Array2<f64> {
    corpus.prototypes.dot(&corpus.prototypes.t())
}
