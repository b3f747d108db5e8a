//! Labeled image datasets, the procedural benchmark and the ACDS1 file format.
//!
//! ACDS1 layout (little-endian): magic `ACDS1`, then u32 `N, C, H, W,
//! num_classes`, then `N*C*H*W` pixel bytes (row-major), then `N` u16 labels.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::builder::InputShape;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::seed;

pub const ACDS_MAGIC: &[u8; 5] = b"ACDS1";

/// Images stored as bytes; batches are scaled to `[0, 1]` on extraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    shape: InputShape,
    num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        shape: InputShape,
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let img = shape.channels * shape.height * shape.width;
        if img == 0 || num_classes == 0 {
            return Err(Error::Dataset("empty image shape or no classes".into()));
        }
        if pixels.len() != img * labels.len() {
            return Err(Error::Dataset(format!(
                "{} pixel bytes for {} images of {img} bytes",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            shape,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn image_len(&self) -> usize {
        self.shape.channels * self.shape.height * self.shape.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Sample indices with label `class`, in storage order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// `[len(indices), C, H, W]` tensor with values in `[0, 1]`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let scale = T::one() / T::from_f64_lossy(255.0);
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| T::from_u8(p).unwrap() * scale));
        }
        let [c, h, w] = self.shape.dims();
        Tensor::new(vec![indices.len(), c, h, w], data).expect("consistent batch")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            shape: self.shape,
            num_classes: self.num_classes,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape || self.num_classes != other.num_classes {
            return Err(Error::Dataset("cannot concatenate incompatible datasets".into()));
        }
        let mut out = self.clone();
        out.pixels.extend_from_slice(&other.pixels);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 20 + self.pixels.len() + 2 * self.len());
        out.extend_from_slice(ACDS_MAGIC);
        for v in [
            self.len(),
            self.shape.channels,
            self.shape.height,
            self.shape.width,
            self.num_classes,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 25 || &bytes[..5] != ACDS_MAGIC {
            return Err(Error::Dataset("missing ACDS1 magic".into()));
        }
        let field = |i: usize| {
            let o = 5 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        };
        let (n, c, h, w, k) = (field(0), field(1), field(2), field(3), field(4));
        let img = c * h * w;
        let expected = 25 + n * img + 2 * n;
        if bytes.len() != expected {
            return Err(Error::Dataset(format!(
                "ACDS1 length {} does not match header (expected {expected})",
                bytes.len()
            )));
        }
        let pixels = bytes[25..25 + n * img].to_vec();
        let labels = bytes[25 + n * img..]
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
            .collect();
        Self::new(InputShape::new(c, h, w), k, pixels, labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Train and test halves of a benchmark.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Benchmark {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl Benchmark {
    /// Train block followed by test block, as written by `gen-data`.
    pub fn combined(&self) -> Result<LabeledDataset> {
        self.train.concat(&self.test)
    }

    /// Holds out the last `ceil(n_c * test_fraction)` samples of every class
    /// (storage order) as test data. Inverts [`combined`](Self::combined)
    /// when the fraction equals `per_class_test / (per_class_train + per_class_test)`.
    pub fn holdout(ds: &LabeledDataset, test_fraction: f64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Dataset(format!(
                "test fraction {test_fraction} outside (0, 1)"
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..ds.num_classes() {
            let idx = ds.indices_of(c);
            if idx.is_empty() {
                continue;
            }
            let n_test = ((idx.len() as f64 * test_fraction) - 1e-9).ceil() as usize;
            if n_test == 0 || n_test >= idx.len() {
                return Err(Error::Dataset(format!(
                    "class {c} has {} samples, cannot hold out {n_test}",
                    idx.len()
                )));
            }
            let cut = idx.len() - n_test;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self {
            train: ds.subset(&train),
            test: ds.subset(&test),
        })
    }
}

/// Parameters of the procedural grating benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub image_size: usize,
    pub channels: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class_train: 20,
            per_class_test: 10,
            image_size: 16,
            channels: 3,
            noise_level: 0.3,
            seed: 1,
        }
    }
}

/// Noise-free image of `class`: an oriented sinusoidal grating with a
/// class-specific orientation, frequency, phase and per-channel tint, in
/// `[0.1, 0.9]`.
pub fn class_template(class: usize, num_classes: usize, size: usize, channels: usize) -> Vec<f64> {
    let golden = 0.618_033_988_749_895;
    let theta = PI * ((class as f64 * golden) % 1.0);
    let freq = 1.0 + (class % 3) as f64 * 0.75;
    let phase = 2.0 * PI * ((class as f64 * 0.37) % 1.0);
    let mut out = Vec::with_capacity(channels * size * size);
    for ch in 0..channels {
        let tint = 0.5
            + 0.5 * (2.0 * PI * (class as f64 / num_classes as f64 + ch as f64 / channels as f64)).cos();
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
                let wave = (2.0 * PI * freq * u + phase).sin();
                out.push(0.5 + 0.4 * (0.35 + 0.65 * tint) * wave);
            }
        }
    }
    out
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn synth_split(spec: &SyntheticSpec, per_class: usize, stream: u64) -> Result<LabeledDataset> {
    let shape = InputShape::square(spec.channels, spec.image_size);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for c in 0..spec.num_classes {
        let template = class_template(c, spec.num_classes, spec.image_size, spec.channels);
        let mut rng = seed::rng(spec.seed, &[stream, c as u64]);
        for _ in 0..per_class {
            pixels.extend(template.iter().map(|&t| {
                let n: f64 = rng.sample(StandardNormal);
                quantize(t + spec.noise_level * n)
            }));
            labels.push(c);
        }
    }
    LabeledDataset::new(shape, spec.num_classes, pixels, labels)
}

/// Class-major procedural dataset: each class is its template plus i.i.d.
/// Gaussian pixel noise of standard deviation `noise_level`.
pub fn make_synthetic_benchmark(spec: &SyntheticSpec) -> Result<Benchmark> {
    if spec.per_class_train < 1 || spec.per_class_test < 1 {
        return Err(Error::Dataset("per-class counts must be at least 1".into()));
    }
    if spec.num_classes < 1 || spec.num_classes > u16::MAX as usize {
        return Err(Error::Dataset(format!("unsupported class count {}", spec.num_classes)));
    }
    if spec.image_size < 1 || spec.channels < 1 {
        return Err(Error::Dataset("image size and channels must be positive".into()));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::Dataset("noise level must be finite and non-negative".into()));
    }
    Ok(Benchmark {
        train: synth_split(spec, spec.per_class_train, 0)?,
        test: synth_split(spec, spec.per_class_test, 1)?,
    })
}
