//! Synthetic dataset generators for desk-scale verification.
//!
//! Sequences follow a semi-Markov process: a class is drawn from the
//! transition matrix, held for a geometric duration with a per-class mean,
//! and emitted as a one-hot anchor vector plus Gaussian noise. With
//! `future_dependency_offset = k > 0` the label of frame `t` is the class of
//! the emission at frame `t + k` (clamped at the final frame), which makes the
//! task unsolvable from past context alone and probes bidirectionality.
//!
//! Images are 32x32 grayscale with a bright disk in a class-specific cell of
//! a 4x4 grid over background noise; the disk's bounding box is recorded for
//! localization checks.

use crate::cnn::ImageSample;
use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameters of the synthetic task family.
#[derive(Debug, Clone)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Mean segment duration per class, frames.
    pub duration_mean: Vec<f64>,
    pub emission_noise_sigma: f64,
    /// Row-stochastic class transition matrix, `n x n`.
    pub transition: Tensor,
    /// When `k > 0`, frame `t` is labeled with the class emitting at `t + k`.
    pub future_dependency_offset: usize,
    pub frames_per_trial: usize,
    /// Image side length (square).
    pub image_size: usize,
    /// Cells per side of the class-placement grid.
    pub image_grid: usize,
    pub image_noise_sigma: f64,
    pub blob_radius: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        let n = 10;
        SyntheticTaskSpec {
            num_classes: n,
            feature_dim: 16,
            duration_mean: vec![5.0; n],
            emission_noise_sigma: 0.1,
            transition: uniform_transition(n),
            future_dependency_offset: 0,
            frames_per_trial: 120,
            image_size: 32,
            image_grid: 4,
            image_noise_sigma: 0.05,
            blob_radius: 3,
        }
    }
}

impl SyntheticTaskSpec {
    /// Defaults resized to `n` classes (uniform transitions, shared duration
    /// mean).
    pub fn with_classes(n: usize) -> Self {
        SyntheticTaskSpec {
            num_classes: n,
            duration_mean: vec![5.0; n],
            transition: uniform_transition(n),
            ..SyntheticTaskSpec::default()
        }
    }
}

/// Uniform transitions over the other classes (no self-transitions; segment
/// persistence comes from the duration model).
pub fn uniform_transition(n: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![n, n]);
    if n == 1 {
        t.set2(0, 0, 1.0);
        return t;
    }
    let p = 1.0 / (n - 1) as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                t.set2(i, j, p);
            }
        }
    }
    t
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes;
        if n == 0 || n > 10 {
            return Err(Error::Config(format!(
                "num_classes {n} outside 1..=10 (gesture vocabulary size)"
            )));
        }
        if self.feature_dim < n {
            return Err(Error::Config(format!(
                "feature_dim {} must be >= num_classes {n} for one-hot anchors",
                self.feature_dim
            )));
        }
        if self.duration_mean.len() != n {
            return Err(Error::Config(format!(
                "duration_mean has {} entries for {n} classes",
                self.duration_mean.len()
            )));
        }
        if self.duration_mean.iter().any(|&d| d < 1.0) {
            return Err(Error::Config("duration means must be >= 1".into()));
        }
        if self.transition.shape() != [n, n] {
            return Err(Error::Config(format!(
                "transition matrix shape {:?}, expected [{n}, {n}]",
                self.transition.shape()
            )));
        }
        for i in 0..n {
            let sum: f64 = self.transition.row(i).iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
            if self.transition.row(i).iter().any(|&p| p < 0.0) {
                return Err(Error::Config(format!("transition row {i} has negative entries")));
            }
        }
        if self.frames_per_trial == 0 {
            return Err(Error::Config("frames_per_trial must be >= 1".into()));
        }
        if self.image_grid == 0 || self.image_size % self.image_grid != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of image_grid {}",
                self.image_size, self.image_grid
            )));
        }
        if n > self.image_grid * self.image_grid {
            return Err(Error::Config(format!(
                "{n} classes do not fit a {0}x{0} placement grid",
                self.image_grid
            )));
        }
        let cell = self.image_size / self.image_grid;
        if 2 * self.blob_radius + 1 > cell {
            return Err(Error::Config(format!(
                "blob radius {} does not fit a {cell}-pixel grid cell",
                self.blob_radius
            )));
        }
        Ok(())
    }
}

/// Geometric duration with the given mean (support starts at 1), sampled by
/// inverse CDF: `d = 1 + floor(ln(1-u) / ln(1-1/mean))`.
pub fn sample_duration(rng: &mut Rng, mean: f64) -> usize {
    debug_assert!(mean >= 1.0);
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u = rng.next_f64();
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize
}

fn sample_categorical(rng: &mut Rng, probs: &[f64]) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-frame emitting class over one trial of the semi-Markov process.
fn sample_class_sequence(spec: &SyntheticTaskSpec, rng: &mut Rng) -> Vec<usize> {
    let t_len = spec.frames_per_trial;
    let mut classes = Vec::with_capacity(t_len);
    let mut class = rng.below(spec.num_classes);
    while classes.len() < t_len {
        let dur = sample_duration(rng, spec.duration_mean[class]).min(t_len - classes.len());
        classes.extend(std::iter::repeat(class).take(dur));
        class = sample_categorical(rng, spec.transition.row(class));
    }
    classes
}

/// Labels for an emitting-class sequence, honoring the future-dependency
/// offset (clamped at the final frame so every label stays observable).
fn offset_labels(classes: &[usize], offset: usize) -> Vec<usize> {
    let t_len = classes.len();
    (0..t_len)
        .map(|t| classes[(t + offset).min(t_len - 1)])
        .collect()
}

/// Generate `count` feature-sequence trials.
pub fn generate_synthetic_sequences(
    spec: &SyntheticTaskSpec,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<SequenceSample>> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(count);
    for trial in 0..count {
        let classes = sample_class_sequence(spec, rng);
        let labels = offset_labels(&classes, spec.future_dependency_offset);
        let t_len = classes.len();
        let d = spec.feature_dim;
        let mut data = vec![0.0; t_len * d];
        for (t, &class) in classes.iter().enumerate() {
            let row = &mut data[t * d..(t + 1) * d];
            for v in row.iter_mut() {
                *v = rng.gaussian(0.0, spec.emission_noise_sigma);
            }
            row[class] += 1.0;
        }
        samples.push(SequenceSample::new(
            format!("trial{trial:03}"),
            Tensor::new(vec![t_len, d], data)?,
            labels,
            (0..t_len).collect(),
        )?);
    }
    Ok(samples)
}

/// Tight bounding box of a blob, inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BlobBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..=self.y1).contains(&y) && (self.x0..=self.x1).contains(&x)
    }
}

/// Grid cell (row, col) assigned to a class: row-major cell `k`.
fn class_cell(spec: &SyntheticTaskSpec, class: usize) -> (usize, usize) {
    (class / spec.image_grid, class % spec.image_grid)
}

/// One grayscale blob image for `class`: background noise plus a bright disk
/// centered in the class's grid cell. Pixels stay in [0, 1].
pub fn render_blob_image(
    spec: &SyntheticTaskSpec,
    class: usize,
    rng: &mut Rng,
) -> (Tensor, BlobBox) {
    let size = spec.image_size;
    let cell = size / spec.image_grid;
    let (cy_cell, cx_cell) = class_cell(spec, class);
    let cy = cy_cell * cell + cell / 2;
    let cx = cx_cell * cell + cell / 2;
    let r = spec.blob_radius;
    let mut data = vec![0.0; size * size];
    for v in data.iter_mut() {
        *v = rng
            .gaussian(0.0, spec.image_noise_sigma)
            .abs()
            .clamp(0.0, 1.0);
    }
    for y in cy.saturating_sub(r)..=(cy + r).min(size - 1) {
        for x in cx.saturating_sub(r)..=(cx + r).min(size - 1) {
            let dy = y as f64 - cy as f64;
            let dx = x as f64 - cx as f64;
            if dy * dy + dx * dx <= (r as f64) * (r as f64) + 1e-9 {
                data[y * size + x] = (data[y * size + x] + 0.9).min(1.0);
            }
        }
    }
    let image = Tensor::new(vec![size, size, 1], data).expect("shape matches data");
    let blob = BlobBox {
        y0: cy - r,
        x0: cx - r,
        y1: cy + r,
        x1: cx + r,
    };
    (image, blob)
}

/// Generate `count` labeled blob images with uniformly drawn classes.
pub fn generate_synthetic_images(
    spec: &SyntheticTaskSpec,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(ImageSample, BlobBox)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.below(spec.num_classes);
        let (pixels, blob) = render_blob_image(spec, class, rng);
        out.push((
            ImageSample {
                pixels,
                label: class,
            },
            blob,
        ));
    }
    Ok(out)
}

/// Render the per-frame images of one trial: frame `t` shows the blob of the
/// class emitted at `t`. Returns a `T x H x W` stack plus per-frame boxes.
pub fn render_frames(
    spec: &SyntheticTaskSpec,
    classes: &[usize],
    rng: &mut Rng,
) -> (Tensor, Vec<BlobBox>) {
    let size = spec.image_size;
    let t_len = classes.len();
    let mut data = Vec::with_capacity(t_len * size * size);
    let mut boxes = Vec::with_capacity(t_len);
    for &class in classes {
        let (img, blob) = render_blob_image(spec, class, rng);
        data.extend_from_slice(img.data());
        boxes.push(blob);
    }
    (
        Tensor::new(vec![t_len, size, size], data).expect("shape matches data"),
        boxes,
    )
}

/// One image-sequence trial: per-frame blob frames with future-offset labels.
/// Returns (frames `T x H x W`, emitting classes, labels, boxes).
pub fn generate_image_trial(
    spec: &SyntheticTaskSpec,
    rng: &mut Rng,
) -> (Tensor, Vec<usize>, Vec<usize>, Vec<BlobBox>) {
    let classes = sample_class_sequence(spec, rng);
    let labels = offset_labels(&classes, spec.future_dependency_offset);
    let (frames, boxes) = render_frames(spec, &classes, rng);
    (frames, classes, labels, boxes)
}
