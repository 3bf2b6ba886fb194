//! Learned color quantizer: a per-pixel color probability map, its hard
//! (argmax and table lookup) and soft (probability-weighted) passes, the
//! palette diversity penalty and training against a frozen classifier.

mod network;
mod ops;
mod train;

pub use network::{QuantizerNetwork, UNetConfig};
pub use ops::{apply_color_jitter, diversity_tensor, soft_palette_tensor, soft_reconstruct_tensor, SOFT_EPS};
pub use train::{evaluate_hard_pass, quantizer_loss, train_quantizer, QuantizerEpoch, QuantizerLoss, QuantizerSchedule};

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, IndexOp, Tensor};
use serde::{Deserialize, Serialize};

use crate::classifier::images_to_tensor;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::imaging::{IndexMap, Palette, QuantResult, RgbImage};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    /// Palette size is `2^bit_depth`.
    pub bit_depth: u32,
    /// Weight of the diversity penalty.
    pub gamma: f64,
    /// Standard deviation of the jitter added to the normalized soft output.
    pub xi: f64,
    /// Multiplier on the dataset std when normalizing the soft output for
    /// the classifier.
    pub norm_scale: f64,
    /// Dataset statistics; the network input uses them at scale 1.
    pub normalization: Normalization,
    pub unet: UNetConfig,
}

impl QuantizerConfig {
    pub fn new(bit_depth: u32, normalization: Normalization) -> Self {
        Self {
            bit_depth,
            gamma: 1.0,
            xi: 1.0,
            norm_scale: 4.0,
            normalization,
            unet: UNetConfig::default(),
        }
    }

    pub fn num_colors(&self) -> usize {
        1 << self.bit_depth
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.bit_depth) {
            return Err(Error::Config(format!("bit depth {} outside 1..=6", self.bit_depth)));
        }
        if !(self.gamma >= 0.0 && self.xi >= 0.0 && self.norm_scale > 0.0) {
            return Err(Error::Config(format!(
                "need gamma >= 0, xi >= 0 and a positive normalization scale, got {}, {}, {}",
                self.gamma, self.xi, self.norm_scale
            )));
        }
        Ok(())
    }

    pub fn build_network(&self, seed: u64) -> Result<QuantizerNetwork> {
        self.validate()?;
        QuantizerNetwork::new(self.unet, self.num_colors(), seed)
    }
}

/// Per-pixel distribution over `C` palette slots, stored row-major with the
/// color axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    channels: usize,
    probs: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, channels: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || probs.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} probabilities for a {height}×{width}×{channels} map",
                probs.len()
            )));
        }
        for (i, pixel) in probs.chunks_exact(channels).enumerate() {
            let sum: f64 = pixel.iter().sum();
            if pixel.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidImage(format!(
                    "pixel {i} is not a distribution: {pixel:?}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            probs,
        })
    }

    /// One-hot map that puts all mass on each pixel's index.
    pub fn one_hot(index_map: &IndexMap, channels: usize) -> Result<Self> {
        index_map.validate(channels)?;
        let mut probs = vec![0.0; index_map.indices().len() * channels];
        for (p, &i) in index_map.indices().iter().enumerate() {
            probs[p * channels + i as usize] = 1.0;
        }
        Self::new(index_map.height(), index_map.width(), channels, probs)
    }

    /// From a `C×H×W` or `1×C×H×W` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 { t.i(0)? } else { t.clone() };
        let (c, h, w) = t.dims3()?;
        let hwc = t.to_dtype(DType::F64)?.permute((1, 2, 0))?.flatten_all()?.to_vec1::<f64>()?;
        Self::new(h, w, c, hwc)
    }

    /// `1×C×H×W` tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_vec(self.probs.clone(), (self.height, self.width, self.channels), &Device::Cpu)?;
        Ok(t.permute((2, 0, 1))?.unsqueeze(0)?.contiguous()?.to_dtype(dtype)?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.width + col) * self.channels;
        &self.probs[at..at + self.channels]
    }

    pub fn get(&self, row: usize, col: usize, c: usize) -> f64 {
        self.pixel(row, col)[c]
    }
}

fn image_tensor(image: &RgbImage) -> Result<Tensor> {
    images_to_tensor(std::slice::from_ref(image), DType::F64)
}

fn check_match(image: &RgbImage, m: &ProbabilityMap) -> Result<()> {
    if (image.height(), image.width()) != (m.height(), m.width()) {
        return Err(Error::Shape(format!(
            "image is {}×{}, map {}×{}",
            image.height(),
            image.width(),
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

fn check_network(net: &QuantizerNetwork, config: &QuantizerConfig) -> Result<()> {
    config.validate()?;
    if net.num_colors() != config.num_colors() {
        return Err(Error::Config(format!(
            "network emits {} colors but the configuration asks for {}",
            net.num_colors(),
            config.num_colors()
        )));
    }
    Ok(())
}

/// Probability maps for a batch of raw images, evaluation mode.
pub fn forward_prob_maps(net: &QuantizerNetwork, images: &[RgbImage], config: &QuantizerConfig) -> Result<Vec<ProbabilityMap>> {
    check_network(net, config)?;
    let x = images_to_tensor(images, net.dtype())?;
    let m = net.prob_map(&config.normalization.apply(&x, 1.0)?, false)?;
    (0..images.len()).map(|b| ProbabilityMap::from_tensor(&m.i(b)?)).collect()
}

pub fn forward_prob_map(net: &QuantizerNetwork, image: &RgbImage, config: &QuantizerConfig) -> Result<ProbabilityMap> {
    Ok(forward_prob_maps(net, std::slice::from_ref(image), config)?.remove(0))
}

/// Most probable color per pixel; the lowest index wins ties.
pub fn argmax_index_map(m: &ProbabilityMap) -> IndexMap {
    let indices = m
        .probs
        .chunks_exact(m.channels)
        .map(|pixel| {
            let mut best = 0;
            for (c, &p) in pixel.iter().enumerate() {
                if p > pixel[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    IndexMap::new(m.height, m.width, indices).expect("map dimensions are positive")
}

/// Mean color of the pixels assigned to each slot. Unused slots are filled
/// from the soft palette of `fallback` when given, otherwise with the image
/// mean, and are flagged on the palette.
pub fn hard_palette(
    image: &RgbImage,
    index_map: &IndexMap,
    num_colors: usize,
    fallback: Option<&ProbabilityMap>,
) -> Result<Palette> {
    if (image.height(), image.width()) != (index_map.height(), index_map.width()) {
        return Err(Error::Shape("index map and image differ in size".into()));
    }
    index_map.validate(num_colors)?;
    let mut sums = vec![[0f64; 3]; num_colors];
    let mut counts = vec![0usize; num_colors];
    for (px, &i) in image.pixels().zip(index_map.indices()) {
        counts[i as usize] += 1;
        for k in 0..3 {
            sums[i as usize][k] += px[k] as f64;
        }
    }
    let soft = match fallback {
        Some(m) if counts.contains(&0) => {
            if m.channels() != num_colors {
                return Err(Error::Shape(format!("fallback map has {} channels, expected {num_colors}", m.channels())));
            }
            Some(soft_palette(image, m)?)
        }
        _ => None,
    };
    let mean = image.mean_color();
    let mut colors = Vec::with_capacity(num_colors);
    let mut flags = Vec::with_capacity(num_colors);
    for c in 0..num_colors {
        if counts[c] > 0 {
            colors.push(sums[c].map(|s| (s / counts[c] as f64) as f32));
            flags.push(false);
        } else {
            colors.push(soft.as_ref().map_or(mean, |p| p.color(c)));
            flags.push(true);
        }
    }
    Ok(Palette::with_fallback(colors, flags))
}

/// Argmax, per-slot means, then table lookup: the deployed forward pass.
pub fn hard_quantize(net: &QuantizerNetwork, image: &RgbImage, config: &QuantizerConfig) -> Result<QuantResult> {
    Ok(hard_quantize_batch(net, std::slice::from_ref(image), config)?.remove(0))
}

pub fn hard_quantize_batch(net: &QuantizerNetwork, images: &[RgbImage], config: &QuantizerConfig) -> Result<Vec<QuantResult>> {
    let maps = forward_prob_maps(net, images, config)?;
    images
        .iter()
        .zip(&maps)
        .map(|(image, m)| hard_quantize_with_map(image, m))
        .collect()
}

/// Hard pass for a given probability map.
pub fn hard_quantize_with_map(image: &RgbImage, m: &ProbabilityMap) -> Result<QuantResult> {
    check_match(image, m)?;
    let index_map = argmax_index_map(m);
    let palette = hard_palette(image, &index_map, m.channels(), Some(m))?;
    QuantResult::from_parts(palette, index_map)
}

/// Probability-weighted mean color per slot.
pub fn soft_palette(image: &RgbImage, m: &ProbabilityMap) -> Result<Palette> {
    check_match(image, m)?;
    let t = soft_palette_tensor(&image_tensor(image)?, &m.to_tensor(DType::F64)?)?;
    let rows = t.i(0)?.to_vec2::<f64>()?;
    Ok(Palette::new(rows.iter().map(|r| [r[0] as f32, r[1] as f32, r[2] as f32]).collect()))
}

/// Soft reconstruction for a given probability map.
pub fn soft_quantize_with_map(image: &RgbImage, m: &ProbabilityMap) -> Result<RgbImage> {
    check_match(image, m)?;
    let mt = m.to_tensor(DType::F64)?;
    let t = soft_palette_tensor(&image_tensor(image)?, &mt)?;
    let out = soft_reconstruct_tensor(&t, &mt)?.flatten_all()?.to_vec1::<f64>()?;
    let planar: Vec<f32> = out.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    RgbImage::from_chw(image.height(), image.width(), &planar)
}

/// The differentiable training-time reconstruction, evaluated once.
pub fn soft_quantize(net: &QuantizerNetwork, image: &RgbImage, config: &QuantizerConfig) -> Result<RgbImage> {
    soft_quantize_with_map(image, &forward_prob_map(net, image, config)?)
}

/// Palette diversity penalty of a single map, in `[0, log2 C)`.
pub fn diversity_regularizer(m: &ProbabilityMap) -> Result<f64> {
    ops::scalar(&diversity_tensor(&m.to_tensor(DType::F64)?)?.i(0)?)
}

/// Plain-text record stored beside quantizer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerManifest {
    pub config: QuantizerConfig,
    pub dataset: Option<String>,
    pub classifier: Option<String>,
    pub epochs_trained: usize,
    pub seed: u64,
}

impl QuantizerNetwork {
    /// Writes `path` (safetensors) and a TOML manifest beside it.
    pub fn save(&self, path: impl AsRef<Path>, manifest: &QuantizerManifest) -> Result<()> {
        let path = path.as_ref();
        self.store().save(path)?;
        let text = toml::to_string(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(path.with_extension("toml"), text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, QuantizerManifest)> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let manifest_path = path.with_extension("toml");
        let text = fs::read_to_string(&manifest_path).map_err(|_| Error::MissingCheckpoint(manifest_path.clone()))?;
        let manifest: QuantizerManifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.config.validate()?;
        let mut store = ParamStore::new(DType::F32, manifest.seed);
        store.load(path)?;
        let net = Self::build(manifest.config.unet, manifest.config.num_colors(), store)?;
        Ok((net, manifest))
    }
}
