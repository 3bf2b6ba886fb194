//! Labeled image collections, normalization statistics and subsetting.

mod loaders;
mod manifest;
mod synthetic;

pub use loaders::{load_dataset, load_dataset_with, LoadOptions};
pub use manifest::{write_source_manifest, SourceEntry, SourceManifest};
pub use synthetic::{shapes, SHAPE_CLASSES};

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    Stl10,
    Tiny200,
}

impl DatasetName {
    pub const ALL: [DatasetName; 4] = [Self::Cifar10, Self::Cifar100, Self::Stl10, Self::Tiny200];

    pub fn descriptor(self) -> DatasetDescriptor {
        let (num_classes, train_count, test_count, resolution) = match self {
            Self::Cifar10 => (10, 50_000, 10_000, 32),
            Self::Cifar100 => (100, 50_000, 10_000, 32),
            Self::Stl10 => (10, 5_000, 8_000, 96),
            Self::Tiny200 => (200, 100_000, 10_000, 64),
        };
        DatasetDescriptor {
            name: self,
            num_classes,
            train_count,
            test_count,
            resolution,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cifar10 => "cifar10",
            Self::Cifar100 => "cifar100",
            Self::Stl10 => "stl10",
            Self::Tiny200 => "tiny200",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" => Ok(Self::Cifar10),
            "cifar100" => Ok(Self::Cifar100),
            "stl10" => Ok(Self::Stl10),
            "tiny200" | "tiny-imagenet-200" => Ok(Self::Tiny200),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Published size and shape of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: DatasetName,
    pub num_classes: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub resolution: usize,
}

impl DatasetDescriptor {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Test => self.test_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel mean and standard deviation used to normalize network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// `(x - mean) / (std * scale)` for an `N×3×H×W` batch.
    pub fn apply(&self, x: &Tensor, scale: f64) -> Result<Tensor> {
        let dtype = x.dtype();
        let mean = Tensor::new(&self.mean, x.device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&self.std, x.device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&(std * scale)?)?)
    }
}

impl From<ChannelStats> for Normalization {
    fn from(s: ChannelStats) -> Self {
        Normalization {
            mean: s.mean.map(|v| v as f32),
            std: s.std.map(|v| v.max(1e-6) as f32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// In-memory labeled images of a single resolution, stored as 8-bit RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    height: usize,
    width: usize,
    num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u32>,
}

impl LabeledImages {
    pub fn new(height: usize, width: usize, num_classes: usize, pixels: Vec<u8>, labels: Vec<u32>) -> Result<Self> {
        if pixels.len() != labels.len() * height * width * 3 {
            return Err(Error::Shape(format!(
                "{} bytes do not hold {} images of {height}×{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn from_images(images: &[RgbImage], labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let mut pixels = Vec::with_capacity(images.len() * h * w * 3);
        for img in images {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::Shape("images differ in size".into()));
            }
            pixels.extend(img.to_rgb8());
        }
        Self::new(h, w, num_classes, pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn rgb8(&self, i: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> RgbImage {
        RgbImage::from_rgb8(self.height, self.width, self.rgb8(i)).expect("stored image is well formed")
    }

    pub fn iter(&self) -> impl Iterator<Item = (RgbImage, u32)> + '_ {
        (0..self.len()).map(|i| (self.image(i), self.labels[i]))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.height * self.width * 3);
        for &i in indices {
            pixels.extend_from_slice(self.rgb8(i));
        }
        Self {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// `B×3×H×W` batch in `[0, 1]`. With an rng, each image gets a random
    /// crop from a 4-pixel zero-padded copy and a coin-flip horizontal mirror.
    pub fn batch(&self, indices: &[usize], augment: Option<&mut ChaCha8Rng>, dtype: DType) -> Result<(Tensor, Vec<u32>)> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let mut out = vec![0f32; indices.len() * 3 * plane];
        let mut rng = augment;
        for (b, &i) in indices.iter().enumerate() {
            let src = self.rgb8(i);
            let (dy, dx, flip) = match rng.as_deref_mut() {
                Some(r) => (r.random_range(-4i64..=4), r.random_range(-4i64..=4), r.random_bool(0.5)),
                None => (0, 0, false),
            };
            let dst = &mut out[b * 3 * plane..(b + 1) * 3 * plane];
            for row in 0..h {
                let sr = row as i64 + dy;
                if sr < 0 || sr >= h as i64 {
                    continue;
                }
                for col in 0..w {
                    let c = if flip { w - 1 - col } else { col };
                    let sc = c as i64 + dx;
                    if sc < 0 || sc >= w as i64 {
                        continue;
                    }
                    let s = (sr as usize * w + sc as usize) * 3;
                    for k in 0..3 {
                        dst[k * plane + row * w + col] = src[s + k] as f32 / 255.0;
                    }
                }
            }
        }
        let t = Tensor::from_vec(out, (indices.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?;
        Ok((t, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Class-balanced subset holding `per_class` images of every class, chosen
/// by a seeded shuffle and returned in original order.
pub fn subset(data: &LabeledImages, per_class: usize, seed: u64) -> Result<LabeledImages> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let available = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if per_class > available {
        return Err(Error::OversizedSubset {
            requested: per_class,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * by_class.len());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..per_class]);
    }
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}

/// Streaming per-channel mean and population standard deviation over every
/// pixel, with values scaled to `[0, 1]`.
pub fn channel_stats(data: &LabeledImages) -> Result<ChannelStats> {
    if data.is_empty() {
        return Err(Error::Config("channel statistics of an empty dataset".into()));
    }
    let mut count = 0f64;
    let mut mean = [0f64; 3];
    let mut m2 = [0f64; 3];
    for i in 0..data.len() {
        for px in data.rgb8(i).chunks_exact(3) {
            count += 1.0;
            for k in 0..3 {
                let v = px[k] as f64 / 255.0;
                let delta = v - mean[k];
                mean[k] += delta / count;
                m2[k] += delta * (v - mean[k]);
            }
        }
    }
    Ok(ChannelStats {
        mean,
        std: m2.map(|m| (m / count).sqrt()),
    })
}
