use candle_core::{DType, IndexOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{batches, check_finite};
use super::{Classifier, PROBE};
use crate::classifier::train::images_to_tensor;
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::nn::{argmax_rows, cross_entropy, Sgd};

/// A single-channel map over image pixels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ActivationMap {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Position of the largest value, first in raster order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Mask of the `fraction` highest-valued pixels.
    pub fn top_mask(&self, fraction: f64) -> Vec<bool> {
        let keep = ((self.values.len() as f64 * fraction).round() as usize).clamp(1, self.values.len());
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        let mut mask = vec![false; self.values.len()];
        for &i in &order[..keep] {
            mask[i] = true;
        }
        mask
    }

    /// Intersection over union of the top-`fraction` masks of two maps.
    pub fn top_iou(&self, other: &ActivationMap, fraction: f64) -> f64 {
        let (a, b) = (self.top_mask(fraction), other.top_mask(fraction));
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let coord = |i: usize, s: usize, d: usize| {
        let x = ((i as f32 + 0.5) * s as f32 / d as f32 - 0.5).clamp(0.0, (s - 1) as f32);
        let lo = x.floor() as usize;
        (lo, (lo + 1).min(s - 1), x - lo as f32)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let (r0, r1, fr) = coord(r, sh, dh);
        for c in 0..dw {
            let (c0, c1, fc) = coord(c, sw, dw);
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Class-weighted sum of the final convolutional features, resized to the
/// image and min-max scaled to `[0, 1]`. A flat map comes back as zeros.
pub fn class_activation_map(classifier: &Classifier, image: &RgbImage, class: usize) -> Result<ActivationMap> {
    let num_classes = classifier.spec().num_classes;
    if class >= num_classes {
        return Err(Error::LabelOutOfRange {
            label: class,
            num_classes,
        });
    }
    let weights = classifier.cam_weights()?.to_dtype(DType::F32)?;
    let x = images_to_tensor(std::slice::from_ref(image), classifier.dtype())?;
    let features = classifier.features(&classifier.normalization().apply(&x, 1.0)?, false)?;
    let (_, channels, fh, fw) = features.dims4()?;
    let flat = features.i(0)?.to_dtype(DType::F32)?.reshape((channels, fh * fw))?;
    let cam = weights.i(class)?.reshape((1, channels))?.matmul(&flat)?.flatten_all()?.to_vec1::<f32>()?;
    let mut values = resize_bilinear(&cam, fh, fw, image.height(), image.width());
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in &mut values {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
    Ok(ActivationMap {
        height: image.height(),
        width: image.width(),
        values,
    })
}

/// Fits a global-average-pool plus linear probe on frozen final features so
/// that architectures without such a head can produce CAMs. Returns the
/// probe's training accuracy in the last epoch.
pub fn train_cam_probe(
    classifier: &mut Classifier,
    data: &LabeledImages,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    if epochs == 0 || batch_size == 0 {
        return Err(Error::Config("probe epochs and batch size must be positive".into()));
    }
    let frozen = classifier.frozen()?;
    let probe_x = data.batch(&[0], None, classifier.dtype())?.0;
    let width = frozen.features(&frozen.normalization().apply(&probe_x, 1.0)?, false)?.dim(1)?;
    classifier.attach_probe(width)?;
    let vars = classifier
        .store()
        .trainable()
        .into_iter()
        .filter(|(name, _)| name.starts_with(PROBE))
        .map(|(_, v)| v)
        .collect();
    let mut opt = Sgd::new(vars, 0.9, 5e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accuracy = 0.0;
    for epoch in 0..epochs {
        let mut correct = 0;
        for (step, idx) in batches(data.len(), batch_size, &mut rng).into_iter().enumerate() {
            let (x, labels) = data.batch(&idx, None, classifier.dtype())?;
            let features = frozen.features(&frozen.normalization().apply(&x, 1.0)?, false)?.detach();
            let logits = classifier.probe_logits(&features)?.expect("probe attached");
            let loss = cross_entropy(&logits, &labels)?;
            check_finite(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?, epoch, step, "probe cross-entropy")?;
            opt.step(&loss.backward()?, lr)?;
            correct += argmax_rows(&logits)?.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        accuracy = correct as f64 / data.len() as f64;
    }
    Ok(accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Architecture, ClassifierSpec};
    use crate::data::Normalization;

    #[test]
    fn bilinear_keeps_constants_and_corners() {
        let out = resize_bilinear(&[2.0; 4], 2, 2, 5, 7);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-6));
        let ramp = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(ramp, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn cam_is_normalized() {
        let spec = ClassifierSpec::new(Architecture::ResNet18, 3, 16).narrowed(32);
        let clf = Classifier::new(spec, Normalization::IDENTITY, 1).unwrap();
        let img = RgbImage::from_fn(16, 16, |r, c| [r as f32 / 15.0, c as f32 / 15.0, 0.5]);
        let cam = class_activation_map(&clf, &img, 2).unwrap();
        assert_eq!(cam.values.len(), 256);
        assert!(cam.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn alexnet_needs_a_probe() {
        let spec = ClassifierSpec::new(Architecture::AlexNet, 2, 32).narrowed(16);
        let mut clf = Classifier::new(spec, Normalization::IDENTITY, 1).unwrap();
        let img = RgbImage::filled(32, 32, [0.3; 3]);
        assert!(matches!(class_activation_map(&clf, &img, 0), Err(Error::Unsupported(_))));
        let data = LabeledImages::from_images(&[img.clone(), RgbImage::filled(32, 32, [0.9; 3])], vec![0, 1], 2).unwrap();
        train_cam_probe(&mut clf, &data, 2, 2, 0.1, 0).unwrap();
        assert!(class_activation_map(&clf, &img, 0).is_ok());
    }

    #[test]
    fn top_mask_iou() {
        let a = ActivationMap { height: 1, width: 4, values: vec![0.0, 0.2, 0.9, 1.0] };
        let b = ActivationMap { height: 1, width: 4, values: vec![1.0, 0.9, 0.2, 0.0] };
        assert_eq!(a.top_iou(&a, 0.5), 1.0);
        assert_eq!(a.top_iou(&b, 0.5), 0.0);
        assert_eq!(a.argmax(), (0, 3));
    }
}
