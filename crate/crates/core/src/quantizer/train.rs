use std::io::Write;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{apply_color_jitter, diversity_tensor, scalar, soft_palette_tensor, soft_reconstruct_tensor};
use super::{hard_quantize_batch, QuantizerConfig, QuantizerNetwork};
use crate::classifier::train::batches;
use crate::classifier::{evaluate_top1_images, Classifier};
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, LrSchedule, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: LrSchedule,
    /// Run the hard-pass validation every this many epochs (and after the last).
    pub val_every: usize,
    #[serde(default)]
    pub augment: bool,
}

impl Default for QuantizerSchedule {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            momentum: 0.5,
            weight_decay: 5e-4,
            lr: LrSchedule::CosineWarmRestart {
                peak: 0.01,
                min: 0.0,
                period: 20.0,
            },
            val_every: 5,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub regularizer: f64,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
}

pub struct QuantizerLoss {
    /// Cross-entropy plus `gamma` times the mean diversity penalty.
    pub total: Tensor,
    pub cross_entropy: Tensor,
    pub regularizer: Tensor,
}

/// Training objective for one batch of raw `[0, 1]` images: soft palette and
/// reconstruction, normalization at `norm_scale` times the dataset std,
/// jitter, then the classifier's cross-entropy plus the diversity penalty.
///
/// Gradients reach only the parameters of `net` if `classifier` is frozen.
pub fn quantizer_loss<R: rand::Rng>(
    net: &QuantizerNetwork,
    classifier: &Classifier,
    x: &Tensor,
    labels: &[u32],
    config: &QuantizerConfig,
    rng: &mut R,
) -> Result<QuantizerLoss> {
    let m = net.prob_map(&config.normalization.apply(x, 1.0)?, true)?;
    let palette = soft_palette_tensor(x, &m)?;
    let soft = soft_reconstruct_tensor(&palette, &m)?;
    let normalized = config.normalization.apply(&soft, config.norm_scale)?;
    let jittered = apply_color_jitter(&normalized, config.xi, rng)?;
    let logits = classifier.logits(&jittered, false)?;
    let ce = cross_entropy(&logits, labels)?;
    let regularizer = diversity_tensor(&m)?.mean_all()?;
    let total = (&ce + (&regularizer * config.gamma)?)?;
    Ok(QuantizerLoss {
        total,
        cross_entropy: ce,
        regularizer,
    })
}

/// Top-1 accuracy of the classifier on hard-quantized images.
pub fn evaluate_hard_pass(
    net: &QuantizerNetwork,
    classifier: &Classifier,
    data: &LabeledImages,
    config: &QuantizerConfig,
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|&i| data.image(i)).collect();
        let labels: Vec<u32> = chunk.iter().map(|&i| data.label(i)).collect();
        let quantized: Vec<_> = hard_quantize_batch(net, &images, config)?.into_iter().map(|q| q.image).collect();
        correct += evaluate_top1_images(classifier, &quantized, &labels, batch_size)? * chunk.len() as f64;
    }
    Ok(correct / data.len().max(1) as f64)
}

/// Optimizes the quantizer's parameters against a classifier whose weights
/// and statistics stay untouched. One JSON line per epoch goes to `log`.
#[allow(clippy::too_many_arguments)]
pub fn train_quantizer(
    net: &mut QuantizerNetwork,
    classifier: &Classifier,
    train: &LabeledImages,
    val: Option<&LabeledImages>,
    config: &QuantizerConfig,
    schedule: &QuantizerSchedule,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<QuantizerEpoch>> {
    super::check_network(net, config)?;
    if schedule.epochs == 0 || schedule.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let spec = classifier.spec();
    if train.height() != spec.resolution || train.width() != spec.resolution {
        return Err(Error::Shape(format!(
            "images are {}×{} but the classifier expects {}",
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
    let frozen = classifier.frozen()?;
    let vars = net.store().trainable().into_iter().map(|(_, v)| v).collect();
    let mut opt = Sgd::new(vars, schedule.momentum, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps_per_epoch = train.len().div_ceil(schedule.batch_size);
    let total_steps = steps_per_epoch * schedule.epochs;
    let mut step = 0;
    let mut history = Vec::new();

    for epoch in 0..schedule.epochs {
        let (mut loss_sum, mut reg_sum) = (0.0, 0.0);
        let mut lr = 0.0;
        for idx in batches(train.len(), schedule.batch_size, &mut rng) {
            let (x, labels) = train.batch(&idx, schedule.augment.then_some(&mut rng), net.dtype())?;
            let loss = quantizer_loss(net, &frozen, &x, &labels, config, &mut rng)?;
            let value = scalar(&loss.total)?;
            if !value.is_finite() {
                let detail = format!(
                    "cross-entropy {}, regularizer {}",
                    scalar(&loss.cross_entropy)?,
                    scalar(&loss.regularizer)?
                );
                return Err(Error::NonFiniteLoss { epoch, step, detail });
            }
            lr = schedule.lr.lr_at(step, total_steps, steps_per_epoch);
            opt.step(&loss.total.backward()?, lr)?;
            loss_sum += value * labels.len() as f64;
            reg_sum += scalar(&loss.regularizer)? * labels.len() as f64;
            step += 1;
        }
        let last = epoch + 1 == schedule.epochs;
        let due = schedule.val_every > 0 && (epoch + 1) % schedule.val_every == 0;
        let val_accuracy = match val {
            Some(v) if due || last => Some(evaluate_hard_pass(net, &frozen, v, config, schedule.batch_size)?),
            _ => None,
        };
        let record = QuantizerEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            regularizer: reg_sum / train.len() as f64,
            lr,
            val_accuracy,
        };
        log::info!(
            "quantizer epoch {epoch}: loss {:.4} R {:.4} val {:?}",
            record.train_loss,
            record.regularizer,
            record.val_accuracy
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
    }
    Ok(history)
}
