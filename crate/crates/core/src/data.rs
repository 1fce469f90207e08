//! Datasets, synthetic generators, label corruption, augmentation and
//! deterministic batching.
//!
//! Inputs are stored flat, row-major, one sample after another. Image samples
//! use channel-major `[channels, height, width]` layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::{tags, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    /// Per-sample shape: `[d]` for vectors, `[c, h, w]` for images.
    pub sample_shape: Vec<usize>,
    pub class_count: usize,
    /// Always `0..n`; kept explicit so batches can carry them.
    pub sample_ids: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    /// Validates every invariant: shape arithmetic, labels in range and
    /// inputs inside `[0, 1]`.
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        sample_shape: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(invalid!("class_count must be at least 2, got {class_count}"));
        }
        let dim: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || dim == 0 {
            return Err(shape_err!("empty sample shape {sample_shape:?}"));
        }
        if inputs.len() != labels.len() * dim {
            return Err(shape_err!(
                "{} input values do not match {} samples of dimension {dim}",
                inputs.len(),
                labels.len()
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange { label, class_count });
        }
        if let Some((index, &value)) = inputs
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InputOutOfRange { index, value });
        }
        let n = labels.len();
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            sample_shape,
            class_count,
            sample_ids: (0..n).collect(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Gathers the listed positions into a batch that remembers their ids.
    pub fn batch(&self, indices: &[usize]) -> ExampleBatch {
        let d = self.dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        ExampleBatch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
            sample_shape: self.sample_shape.clone(),
            class_count: self.class_count,
        }
    }

    pub fn full_batch(&self) -> ExampleBatch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// New dataset made of the listed positions, re-indexed from 0.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset {
            name: self.name.clone(),
            inputs: b.inputs,
            labels: b.labels,
            sample_shape: self.sample_shape.clone(),
            class_count: self.class_count,
            sample_ids: (0..indices.len()).collect(),
            split: self.split,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// A slice of a dataset handed to models, attacks and objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleBatch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<usize>,
    pub sample_shape: Vec<usize>,
    pub class_count: usize,
}

impl ExampleBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Same labels and ids with replaced inputs (e.g. adversarial points).
    pub fn with_inputs(&self, inputs: Vec<f64>) -> ExampleBatch {
        assert_eq!(inputs.len(), self.inputs.len());
        ExampleBatch {
            inputs,
            labels: self.labels.clone(),
            sample_ids: self.sample_ids.clone(),
            sample_shape: self.sample_shape.clone(),
            class_count: self.class_count,
        }
    }

    /// Sub-batch of the listed positions.
    pub fn select(&self, positions: &[usize]) -> ExampleBatch {
        let d = self.dim();
        let mut inputs = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            inputs.extend_from_slice(self.sample(p));
        }
        ExampleBatch {
            inputs,
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            sample_ids: positions.iter().map(|&p| self.sample_ids[p]).collect(),
            sample_shape: self.sample_shape.clone(),
            class_count: self.class_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub noise_rate: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(noise_rate: f64, seed: u64) -> Result<Self> {
        let spec = Self { noise_rate, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(invalid!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        Ok(())
    }

    /// `floor(noise_rate * n)`, tolerant of representation error in the rate
    /// (0.29 * 100 evaluates to 28.999...).
    pub fn resample_count(&self, n: usize) -> usize {
        let k = libm::floor(self.noise_rate * n as f64 + 1e-9) as usize;
        k.min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub crop_padding: usize,
    pub flip_probability: f64,
    pub enabled: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_padding: 4,
            flip_probability: 0.5,
            enabled: false,
        }
    }
}

/// Gaussian blobs in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum pairwise distance between class means.
    pub separation: f64,
    #[serde(default = "default_blob_std")]
    pub noise_std: f64,
    pub seed: u64,
}

fn default_blob_std() -> f64 {
    0.1
}

/// Class means placed so that their minimum pairwise distance is
/// `separation`: a centred regular simplex when `class_count <= dim`,
/// otherwise equally spaced points on the first axis.
pub fn blob_means(class_count: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = Vec::with_capacity(class_count);
    if class_count <= dim {
        let r = separation / core::f64::consts::SQRT_2;
        let inv_c = 1.0 / class_count as f64;
        for c in 0..class_count {
            let mut m = vec![0.5; dim];
            for (j, v) in m.iter_mut().enumerate().take(class_count) {
                let e = if j == c { 1.0 } else { 0.0 };
                *v += r * (e - inv_c);
            }
            means.push(m);
        }
    } else {
        let mid = (class_count as f64 - 1.0) / 2.0;
        for c in 0..class_count {
            let mut m = vec![0.5; dim];
            m[0] += (c as f64 - mid) * separation;
            means.push(m);
        }
    }
    means
}

/// Gaussian blobs with the default spread (`noise_std = 0.1`).
pub fn make_synthetic(
    class_count: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    make_synthetic_with(&BlobSpec {
        class_count,
        per_class,
        dim,
        separation,
        noise_std: default_blob_std(),
        seed,
    })
}

/// Values are rounded to `f32` precision so that packed `f32` files
/// round-trip bit-exactly.
pub fn make_synthetic_with(spec: &BlobSpec) -> Result<Dataset> {
    if spec.class_count < 2 || spec.per_class == 0 || spec.dim == 0 {
        return Err(invalid!(
            "synthetic blobs need class_count >= 2, per_class >= 1, dim >= 1 (got {}, {}, {})",
            spec.class_count,
            spec.per_class,
            spec.dim
        ));
    }
    if !(spec.separation > 0.0) || !(spec.noise_std >= 0.0) {
        return Err(invalid!("separation must be positive and noise_std non-negative"));
    }
    let means = blob_means(spec.class_count, spec.dim, spec.separation);
    let n = spec.class_count * spec.per_class;
    let mut rng = Stream::new(spec.seed);
    let mut inputs = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.class_count;
        for &mu in &means[c] {
            let v = (mu + spec.noise_std * rng.gaussian()).clamp(0.0, 1.0);
            inputs.push(v as f32 as f64);
        }
        labels.push(c);
    }
    Dataset::new(
        "blobs",
        inputs,
        labels,
        vec![spec.dim],
        spec.class_count,
        Split::Train,
    )
}

/// Synthetic images: every class owns a smooth random prototype; samples are
/// the prototype blended with a random other class's prototype (weight drawn
/// from `U(0, mix_max)`) plus pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub mix_max: f64,
    /// Seed of the class prototypes; share it between train and test sets.
    pub prototype_seed: u64,
    pub seed: u64,
}

pub fn image_prototypes(spec: &ImageSpec) -> Vec<Vec<f64>> {
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mut rng = Stream::derived(spec.prototype_seed, &[tags::INIT]);
    (0..spec.class_count)
        .map(|_| {
            let raw: Vec<f64> = (0..c * h * w).map(|_| rng.gaussian()).collect();
            // 3x3 box blur, twice, per channel.
            let mut img = raw;
            for _ in 0..2 {
                let mut out = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let mut s = 0.0;
                            let mut cnt = 0.0;
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let yy = y as i64 + dy;
                                    let xx = x as i64 + dx;
                                    if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                                        s += img[ch * h * w + yy as usize * w + xx as usize];
                                        cnt += 1.0;
                                    }
                                }
                            }
                            out[ch * h * w + y * w + x] = s / cnt;
                        }
                    }
                }
                img = out;
            }
            let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            img.iter().map(|v| 0.2 + 0.6 * (v - lo) / span).collect()
        })
        .collect()
}

pub fn make_synthetic_images(spec: &ImageSpec) -> Result<Dataset> {
    if spec.class_count < 2 || spec.per_class == 0 {
        return Err(invalid!("synthetic images need class_count >= 2 and per_class >= 1"));
    }
    if spec.channels == 0 || spec.height == 0 || spec.width == 0 {
        return Err(invalid!("image dimensions must be positive"));
    }
    if !(0.0..1.0).contains(&spec.mix_max) || !(spec.noise_std >= 0.0) {
        return Err(invalid!("mix_max must lie in [0, 1) and noise_std be non-negative"));
    }
    let protos = image_prototypes(spec);
    let d = spec.channels * spec.height * spec.width;
    let n = spec.class_count * spec.per_class;
    let mut rng = Stream::new(spec.seed);
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.class_count;
        let other = (c + 1 + rng.below(spec.class_count - 1)) % spec.class_count;
        let mix = spec.mix_max * rng.uniform();
        for j in 0..d {
            let v = (1.0 - mix) * protos[c][j] + mix * protos[other][j] + spec.noise_std * rng.gaussian();
            inputs.push(v.clamp(0.0, 1.0) as f32 as f64);
        }
        labels.push(c);
    }
    Dataset::new(
        "images",
        inputs,
        labels,
        vec![spec.channels, spec.height, spec.width],
        spec.class_count,
        Split::Train,
    )
}

/// Resamples `floor(noise_rate * n)` labels chosen without replacement,
/// uniformly over all classes (a resample may reproduce the true label).
pub fn corrupt_labels(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    corrupt_labels_tracked(dataset, spec).map(|(d, _)| d)
}

/// As [`corrupt_labels`], also returning the resampled positions (sorted).
pub fn corrupt_labels_tracked(
    dataset: &Dataset,
    spec: &CorruptionSpec,
) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let n = dataset.len();
    let k = spec.resample_count(n);
    let mut rng = Stream::derived(spec.seed, &[tags::CORRUPT]);
    let mut order: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for i in 0..k {
        let j = i + rng.below(n - i);
        order.swap(i, j);
    }
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    let mut out = dataset.clone();
    for &i in &chosen {
        out.labels[i] = rng.below(dataset.class_count);
    }
    Ok((out, chosen))
}

/// Random crop after zero padding, then horizontal flip, independently per
/// sample. The stream of each sample is keyed by its id, so results do not
/// depend on batch composition.
pub fn augment_batch(batch: &ExampleBatch, spec: &AugmentationSpec, seed: u64) -> Result<ExampleBatch> {
    if !spec.enabled {
        return Ok(batch.clone());
    }
    let &[c, h, w] = batch.sample_shape.as_slice() else {
        return Err(shape_err!(
            "augmentation needs [c, h, w] samples, got {:?}",
            batch.sample_shape
        ));
    };
    if !(0.0..=1.0).contains(&spec.flip_probability) {
        return Err(invalid!("flip_probability {} outside [0, 1]", spec.flip_probability));
    }
    let p = spec.crop_padding;
    let d = c * h * w;
    let mut inputs = vec![0.0; batch.inputs.len()];
    for (s, &id) in batch.sample_ids.iter().enumerate() {
        let mut rng = Stream::derived(seed, &[tags::AUGMENT, id as u64]);
        let oy = rng.below(2 * p + 1);
        let ox = rng.below(2 * p + 1);
        let flip = rng.bernoulli(spec.flip_probability);
        let src = &batch.inputs[s * d..(s + 1) * d];
        let dst = &mut inputs[s * d..(s + 1) * d];
        for ch in 0..c {
            for y in 0..h {
                // Row y of the crop reads padded row y + oy, i.e. source row y + oy - p.
                let sy = y as isize + oy as isize - p as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let cx = if flip { w - 1 - x } else { x };
                    let sx = cx as isize + ox as isize - p as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[ch * h * w + y * w + x] = src[ch * h * w + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Ok(batch.with_inputs(inputs))
}

/// Deterministic shuffled partition of a dataset into batches.
pub fn batch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Stream::derived(shuffle_seed, &[tags::SHUFFLE, epoch as u64]);
    rng.shuffle(&mut order);
    order
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ExampleBatch;

    fn next(&mut self) -> Option<ExampleBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.dataset.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

pub fn iterate_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: usize,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(invalid!("batch_size must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(invalid!("cannot batch an empty dataset"));
    }
    Ok(BatchIter {
        dataset,
        order: batch_order(dataset.len(), shuffle_seed, epoch),
        batch_size,
        pos: 0,
    })
}
