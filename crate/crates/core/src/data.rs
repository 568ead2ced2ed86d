//! Dataset ingestion and batching: MNIST-style IDX files, CIFAR-10 binary
//! batches, and deterministic synthetic sets for fast tests.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;
const CIFAR_RECORD_LEN: usize = 3073;

/// Labelled image set with values normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "dataset images must be [n, c, h, w], got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images vs {} labels",
                shape[0],
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Contract("dataset needs at least one sample".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Contract(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if images.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-sample shape `[c, h, w]`.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Keep the first `n` samples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Contract(format!(
                "cannot take {n} of {} samples",
                self.len()
            )));
        }
        let sample: usize = self.images.shape()[1..].iter().product();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Dataset::new(
            Tensor::new(shape, self.images.values()[..n * sample].to_vec())?,
            self.labels[..n].to_vec(),
            self.class_count,
        )
    }

    /// Samples `start..start+n` as a new dataset.
    pub fn slice(&self, start: usize, n: usize) -> Result<Dataset> {
        if start + n > self.len() || n == 0 {
            return Err(Error::Contract(format!(
                "slice {start}..{} outside 0..{}",
                start + n,
                self.len()
            )));
        }
        let sample: usize = self.images.shape()[1..].iter().product();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Dataset::new(
            Tensor::new(
                shape,
                self.images.values()[start * sample..(start + n) * sample].to_vec(),
            )?,
            self.labels[start..start + n].to_vec(),
            self.class_count,
        )
    }
}

fn read_u32_be(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parse big-endian IDX image/label files (magics 2051 and 2049).
pub fn load_mnist(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = fs::read(image_path.as_ref())?;
    let label_bytes = fs::read(label_path.as_ref())?;
    parse_mnist(&image_bytes, &label_bytes)
}

pub fn parse_mnist(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(image_bytes, 0, "idx images")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "idx images: magic {magic} != {IDX_IMAGE_MAGIC}"
        )));
    }
    let n = read_u32_be(image_bytes, 4, "idx images")? as usize;
    let rows = read_u32_be(image_bytes, 8, "idx images")? as usize;
    let cols = read_u32_be(image_bytes, 12, "idx images")? as usize;
    let pixels = image_bytes
        .get(16..)
        .filter(|rest| rest.len() == n * rows * cols)
        .ok_or_else(|| {
            Error::Format(format!(
                "idx images: expected {} pixel bytes, file holds {}",
                n * rows * cols,
                image_bytes.len().saturating_sub(16)
            ))
        })?;

    let magic = read_u32_be(label_bytes, 0, "idx labels")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "idx labels: magic {magic} != {IDX_LABEL_MAGIC}"
        )));
    }
    let ln = read_u32_be(label_bytes, 4, "idx labels")? as usize;
    let raw_labels = label_bytes
        .get(8..)
        .filter(|rest| rest.len() == ln)
        .ok_or_else(|| Error::Format("idx labels: truncated payload".into()))?;
    if ln != n {
        return Err(Error::Format(format!(
            "idx: {n} images vs {ln} labels"
        )));
    }

    let values = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels = raw_labels
        .iter()
        .map(|&b| {
            if b > 9 {
                Err(Error::Format(format!("idx labels: digit label {b} > 9")))
            } else {
                Ok(b as usize)
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    Dataset::new(Tensor::new([n, 1, rows, cols], values)?, labels, 10)
}

/// Serialize back to the IDX byte layout; inverse of [`parse_mnist`].
pub fn mnist_bytes(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = ds.images.shape();
    if shape[1] != 1 {
        return Err(Error::Contract(format!(
            "idx export expects single-channel images, got {} channels",
            shape[1]
        )));
    }
    let mut images = Vec::with_capacity(16 + ds.images.numel());
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(shape[0] as u32).to_be_bytes());
    images.extend_from_slice(&(shape[2] as u32).to_be_bytes());
    images.extend_from_slice(&(shape[3] as u32).to_be_bytes());
    images.extend(ds.images.values().iter().map(|&v| (v * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Parse concatenated CIFAR-10 binary batch files (3073-byte records,
/// channel-planar 3x32x32 pixels).
pub fn load_cifar10<P: AsRef<Path>>(bin_paths: &[P]) -> Result<Dataset> {
    if bin_paths.is_empty() {
        return Err(Error::Contract("no CIFAR-10 batch files given".into()));
    }
    let mut bytes = Vec::new();
    for p in bin_paths {
        bytes.extend(fs::read(p.as_ref())?);
    }
    parse_cifar10(&bytes)
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "cifar10: length {} is not a positive multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * 3072);
    for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        if rec[0] > 9 {
            return Err(Error::Format(format!(
                "cifar10: label byte {} outside 0..=9",
                rec[0]
            )));
        }
        labels.push(rec[0] as usize);
        values.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(Tensor::new([n, 3, 32, 32], values)?, labels, 10)
}

/// Serialize back to CIFAR-10 record bytes; inverse of [`parse_cifar10`].
pub fn cifar10_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let shape = ds.images.shape();
    if shape[1] != 3 || shape[2] != 32 || shape[3] != 32 {
        return Err(Error::Contract(format!(
            "cifar export expects [n, 3, 32, 32], got {shape:?}"
        )));
    }
    let sample = 3072;
    let mut bytes = Vec::with_capacity(ds.len() * CIFAR_RECORD_LEN);
    for (i, &label) in ds.labels.iter().enumerate() {
        bytes.push(label as u8);
        bytes.extend(
            ds.images.values()[i * sample..(i + 1) * sample]
                .iter()
                .map(|&v| (v * 255.0).round() as u8),
        );
    }
    Ok(bytes)
}

/// Class-conditional Gaussian blobs on an otherwise dark image; linearly
/// separable at this signal-to-noise ratio.
pub fn synth_blobs(n: usize, classes: usize, side: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Contract(format!(
            "need n >= classes >= 1, got n={n} classes={classes}"
        )));
    }
    if side < 4 {
        return Err(Error::Contract("side must be at least 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let radius = side as f64 / 4.0;
    let sigma = side as f64 / 8.0;
    let mut values = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        let jitter_r = rng.random_range(-0.5..0.5);
        let jitter_c = rng.random_range(-0.5..0.5);
        let center_r = side as f64 / 2.0 + radius * angle.sin() + jitter_r;
        let center_c = side as f64 / 2.0 + radius * angle.cos() + jitter_c;
        let gain = rng.random_range(0.8..1.0);
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - center_r).powi(2) + (c as f64 - center_c).powi(2);
                let v = gain * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                values.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new([n, 1, side, side], values)?, labels, classes)
}

/// Seven-segment digit rendering: which segments light up per digit.
/// Order: top, top-right, bottom-right, bottom, bottom-left, top-left, middle.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],    // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],   // 2
    [true, true, true, true, false, false, true],   // 3
    [false, true, true, false, false, true, true],   // 4
    [true, false, true, true, false, true, true],   // 5
    [true, false, true, true, true, true, true],    // 6
    [true, true, true, false, false, false, false],  // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

const DIGIT_SIDE: usize = 28;
const GLYPH_H: usize = 20;
const GLYPH_W: usize = 12;
const STROKE: usize = 2;
const MAX_SHIFT: i64 = 3;
const PIXEL_NOISE_SIGMA: f64 = 0.12;

fn paint(glyph: &mut [[f64; GLYPH_W]; GLYPH_H], r0: usize, r1: usize, c0: usize, c1: usize) {
    for row in glyph.iter_mut().take(r1).skip(r0) {
        for cell in row.iter_mut().take(c1).skip(c0) {
            *cell = 1.0;
        }
    }
}

fn render_digit(digit: usize) -> [[f64; GLYPH_W]; GLYPH_H] {
    let mut glyph = [[0.0; GLYPH_W]; GLYPH_H];
    let mid = GLYPH_H / 2;
    let segs = SEGMENTS[digit];
    if segs[0] {
        paint(&mut glyph, 0, STROKE, 0, GLYPH_W);
    }
    if segs[1] {
        paint(&mut glyph, 0, mid, GLYPH_W - STROKE, GLYPH_W);
    }
    if segs[2] {
        paint(&mut glyph, mid, GLYPH_H, GLYPH_W - STROKE, GLYPH_W);
    }
    if segs[3] {
        paint(&mut glyph, GLYPH_H - STROKE, GLYPH_H, 0, GLYPH_W);
    }
    if segs[4] {
        paint(&mut glyph, mid, GLYPH_H, 0, STROKE);
    }
    if segs[5] {
        paint(&mut glyph, 0, mid, 0, STROKE);
    }
    if segs[6] {
        paint(&mut glyph, mid - STROKE / 2, mid + STROKE - STROKE / 2, 0, GLYPH_W);
    }
    glyph
}

/// Deterministic 28x28 ten-class digit set in the MNIST layout: rendered
/// seven-segment glyphs under random shifts, brightness jitter, and pixel
/// noise. Stands in for handwritten digits when no corpus is on disk.
pub fn synth_digits(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, PIXEL_NOISE_SIGMA).expect("valid sigma");
    let glyphs: Vec<_> = (0..10).map(render_digit).collect();
    let base_r = (DIGIT_SIDE - GLYPH_H) / 2;
    let base_c = (DIGIT_SIDE - GLYPH_W) / 2;
    let mut values = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        let dr = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
        let dc = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
        let gain = rng.random_range(0.75..1.0);
        let mut image = [[0.0f64; DIGIT_SIDE]; DIGIT_SIDE];
        for gr in 0..GLYPH_H {
            for gc in 0..GLYPH_W {
                if glyphs[digit][gr][gc] > 0.0 {
                    let r = base_r as i64 + gr as i64 + dr;
                    let c = base_c as i64 + gc as i64 + dc;
                    if (0..DIGIT_SIDE as i64).contains(&r) && (0..DIGIT_SIDE as i64).contains(&c) {
                        image[r as usize][c as usize] = gain;
                    }
                }
            }
        }
        for row in &image {
            for &v in row {
                values.push((v + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
        labels.push(digit);
    }
    Dataset::new(
        Tensor::new([n, 1, DIGIT_SIDE, DIGIT_SIDE], values)?,
        labels,
        10,
    )
}

/// One gathered mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Index order for one epoch: the identity, or a seeded permutation.
pub fn epoch_indices(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
    }
    indices
}

/// Split one epoch into mini-batches covering every sample exactly once;
/// the final short batch is kept.
pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    let sample: usize = ds.images.shape()[1..].iter().product();
    let order = epoch_indices(ds.len(), shuffle_seed);
    let mut out = Vec::with_capacity(ds.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut values = Vec::with_capacity(chunk.len() * sample);
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            values.extend_from_slice(&ds.images.values()[i * sample..(i + 1) * sample]);
            labels.push(ds.labels[i]);
        }
        let mut shape = ds.images.shape().to_vec();
        shape[0] = chunk.len();
        out.push(Batch {
            images: Tensor::new(shape, values)?,
            labels,
        });
    }
    Ok(out)
}
