//! The small CIFAR10 recipe: a class-balanced training subset, a briefly
//! trained AlexNet, and ColorCNN variants on top of it. Trained weights are
//! cached under a directory so later runs reuse them.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_top1, train_classifier, Architecture, Classifier, ClassifierSpec, TrainSchedule};
use crate::data::{channel_stats, load_dataset, subset, DatasetName, LabeledImages, Normalization, Split};
use crate::error::Result;
use crate::quantizer::{train_quantizer, QuantizerConfig, QuantizerManifest, QuantizerNetwork, QuantizerSchedule, UNetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskScale {
    pub per_class: usize,
    pub classifier_epochs: usize,
    pub quantizer_epochs: usize,
    pub batch_size: usize,
    pub unet: UNetConfig,
    /// Where trained weights and metric logs are kept.
    pub cache_dir: PathBuf,
}

impl DeskScale {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            per_class: 1000,
            classifier_epochs: 20,
            quantizer_epochs: 30,
            batch_size: 128,
            unet: UNetConfig::default(),
            cache_dir: cache_dir.into(),
        }
    }
}

pub struct DeskData {
    pub train: LabeledImages,
    pub test: LabeledImages,
    pub normalization: Normalization,
}

/// CIFAR10 training subset under `seed`, the full test split, and
/// normalization constants from the subset.
pub fn desk_data(cifar10_root: impl AsRef<Path>, per_class: usize, seed: u64) -> Result<DeskData> {
    let root = cifar10_root.as_ref();
    let full = load_dataset(DatasetName::Cifar10, root, Split::Train)?;
    let train = subset(&full, per_class, seed)?;
    let test = load_dataset(DatasetName::Cifar10, root, Split::Test)?;
    let normalization = channel_stats(&train)?.into();
    Ok(DeskData { train, test, normalization })
}

/// AlexNet trained on the subset, or the cached one for this seed.
/// Returns the classifier with its clean test accuracy.
pub fn desk_classifier(desk: &DeskScale, data: &DeskData, seed: u64) -> Result<(Classifier, f64)> {
    let path = desk.cache_dir.join(format!("alexnet_s{seed}.safetensors"));
    if path.exists() {
        let (classifier, manifest) = Classifier::load(&path)?;
        if let Some(acc) = manifest.final_accuracy {
            return Ok((classifier, acc));
        }
    }
    fs::create_dir_all(&desk.cache_dir)?;
    let schedule = TrainSchedule {
        epochs: desk.classifier_epochs,
        batch_size: desk.batch_size,
        ..TrainSchedule::default()
    };
    let spec = ClassifierSpec::new(Architecture::AlexNet, 10, 32);
    let mut log = BufWriter::new(File::create(path.with_extension("log.jsonl"))?);
    let (classifier, _) = train_classifier(spec, data.normalization, &data.train, None, &schedule, seed, Some(&mut log))?;
    let accuracy = evaluate_top1(&classifier, &data.test, desk.batch_size)?;
    let mut manifest = classifier.manifest(seed);
    manifest.dataset = Some(DatasetName::Cifar10.to_string());
    manifest.schedule = Some(schedule);
    manifest.epochs_trained = schedule.epochs;
    manifest.final_accuracy = Some(accuracy);
    classifier.save(&path, &manifest)?;
    Ok((classifier, accuracy))
}

/// A ColorCNN trained against `classifier` at `bit_depth` with the given
/// penalty weight and jitter, or the cached one.
pub fn desk_quantizer(
    desk: &DeskScale,
    data: &DeskData,
    classifier: &Classifier,
    bit_depth: u32,
    gamma: f64,
    xi: f64,
    seed: u64,
) -> Result<(QuantizerNetwork, QuantizerConfig)> {
    let path = desk.cache_dir.join(format!("colorcnn_d{bit_depth}_g{gamma}_x{xi}_s{seed}.safetensors"));
    if path.exists() {
        let (net, manifest) = QuantizerNetwork::load(&path)?;
        return Ok((net, manifest.config));
    }
    fs::create_dir_all(&desk.cache_dir)?;
    let mut config = QuantizerConfig::new(bit_depth, data.normalization);
    config.gamma = gamma;
    config.xi = xi;
    config.unet = desk.unet;
    let mut net = config.build_network(seed)?;
    let schedule = QuantizerSchedule {
        epochs: desk.quantizer_epochs,
        batch_size: desk.batch_size,
        ..QuantizerSchedule::default()
    };
    let mut log = BufWriter::new(File::create(path.with_extension("log.jsonl"))?);
    train_quantizer(&mut net, classifier, &data.train, None, &config, &schedule, seed, Some(&mut log))?;
    let manifest = QuantizerManifest {
        config,
        dataset: Some(DatasetName::Cifar10.to_string()),
        classifier: Some(format!("alexnet_s{seed}")),
        epochs_trained: schedule.epochs,
        seed,
    };
    net.save(&path, &manifest)?;
    Ok((net, config))
}
