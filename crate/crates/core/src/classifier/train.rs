use std::io::Write;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierSpec};
use crate::data::{LabeledImages, Normalization};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::nn::{argmax_rows, cross_entropy, LrSchedule, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: LrSchedule,
    /// Random crop (padding 4) and horizontal flip on training batches.
    #[serde(default = "yes")]
    pub augment: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            momentum: 0.5,
            weight_decay: 5e-4,
            lr: LrSchedule::OneCycle { peak: 0.1 },
            augment: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub(crate) fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn check_finite(loss: f64, epoch: usize, step: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            step,
            detail: format!("{what} evaluated to {loss}"),
        })
    }
}

/// Trains a fresh classifier with SGD on cross-entropy. One JSON line per
/// epoch goes to `log` when given.
pub fn train_classifier(
    spec: ClassifierSpec,
    normalization: Normalization,
    train: &LabeledImages,
    test: Option<&LabeledImages>,
    schedule: &TrainSchedule,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<(Classifier, Vec<ClassifierEpoch>)> {
    schedule.validate()?;
    if train.height() != spec.resolution || train.width() != spec.resolution {
        return Err(Error::Shape(format!(
            "training images are {}×{}, classifier expects {}",
            train.height(),
            train.width(),
            spec.resolution
        )));
    }
    if train.num_classes() != spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, classifier {}",
            train.num_classes(),
            spec.num_classes
        )));
    }
    let classifier = Classifier::new(spec, normalization, seed)?;
    let vars = classifier.store().trainable().into_iter().map(|(_, v)| v).collect();
    let mut opt = Sgd::new(vars, schedule.momentum, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let steps_per_epoch = train.len().div_ceil(schedule.batch_size);
    let total = steps_per_epoch * schedule.epochs;
    let mut step = 0;
    let mut history = Vec::new();

    for epoch in 0..schedule.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(train.len(), schedule.batch_size, &mut rng) {
            let (x, labels) = train.batch(&idx, schedule.augment.then_some(&mut rng), classifier.dtype())?;
            let logits = classifier.logits(&normalization.apply(&x, 1.0)?, true)?;
            let loss = cross_entropy(&logits, &labels)?;
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            check_finite(value, epoch, step, "cross-entropy")?;
            let grads = loss.backward()?;
            opt.step(&grads, schedule.lr.lr_at(step, total, steps_per_epoch))?;
            loss_sum += value * labels.len() as f64;
            correct += argmax_rows(&logits)?.iter().zip(&labels).filter(|(p, l)| p == l).count();
            step += 1;
        }
        let record = ClassifierEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy: match test {
                Some(t) => Some(evaluate_top1(&classifier, t, schedule.batch_size)?),
                None => None,
            },
        };
        log::info!(
            "classifier epoch {epoch}: loss {:.4} train {:.4} test {:?}",
            record.train_loss,
            record.train_accuracy,
            record.test_accuracy
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
    }
    Ok((classifier, history))
}

fn check_labels(classifier: &Classifier, labels: &[u32]) -> Result<()> {
    let num_classes = classifier.spec().num_classes;
    match labels.iter().find(|&&l| l as usize >= num_classes) {
        Some(&l) => Err(Error::LabelOutOfRange {
            label: l as usize,
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Fraction of images whose argmax prediction equals the label.
pub fn evaluate_top1(classifier: &Classifier, data: &LabeledImages, batch_size: usize) -> Result<f64> {
    check_labels(classifier, data.labels())?;
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk, None, classifier.dtype())?;
        correct += count_correct(classifier, &x, &labels)?;
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate_top1_images(classifier: &Classifier, images: &[RgbImage], labels: &[u32], batch_size: usize) -> Result<f64> {
    check_labels(classifier, labels)?;
    if images.len() != labels.len() || images.is_empty() {
        return Err(Error::Config(format!("{} images for {} labels", images.len(), labels.len())));
    }
    let mut correct = 0;
    for (imgs, labs) in images.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
        let x = images_to_tensor(imgs, classifier.dtype())?;
        correct += count_correct(classifier, &x, labs)?;
    }
    Ok(correct as f64 / images.len() as f64)
}

fn count_correct(classifier: &Classifier, x: &Tensor, labels: &[u32]) -> Result<usize> {
    let preds = classifier.predict(x)?;
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count())
}

/// Stacks same-sized images into an `N×3×H×W` tensor.
pub fn images_to_tensor(images: &[RgbImage], dtype: candle_core::DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Config("no images to stack".into()));
    };
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Shape("images in a batch differ in size".into()));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;

    #[test]
    fn rejects_foreign_labels() {
        let spec = ClassifierSpec::new(Architecture::ResNet18, 2, 8).narrowed(64);
        let clf = Classifier::new(spec, Normalization::IDENTITY, 0).unwrap();
        let data = LabeledImages::new(8, 8, 3, vec![0; 8 * 8 * 3], vec![2]).unwrap();
        assert!(matches!(evaluate_top1(&clf, &data, 4), Err(Error::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn mismatched_resolution_is_a_shape_error() {
        let spec = ClassifierSpec::new(Architecture::ResNet18, 2, 16).narrowed(64);
        let data = LabeledImages::new(8, 8, 2, vec![0; 8 * 8 * 3], vec![1]).unwrap();
        let sched = TrainSchedule {
            epochs: 1,
            ..TrainSchedule::default()
        };
        let err = train_classifier(spec, Normalization::IDENTITY, &data, None, &sched, 0, None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
