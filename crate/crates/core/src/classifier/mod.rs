//! Small-image classifiers, their training loop and class activation maps.

mod arch;
mod cam;
pub(crate) mod train;

pub use cam::{class_activation_map, train_cam_probe, ActivationMap};
pub use train::{evaluate_top1, evaluate_top1_images, images_to_tensor, train_classifier, ClassifierEpoch, TrainSchedule};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, Linear, ParamStore};
use arch::Backbone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    AlexNet,
    Vgg16,
    ResNet18,
}

impl Architecture {
    /// Input sides must be a multiple of this.
    pub fn downsampling(self) -> usize {
        match self {
            Architecture::AlexNet => 32,
            Architecture::Vgg16 => 16,
            Architecture::ResNet18 => 8,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::AlexNet => "alexnet",
            Architecture::Vgg16 => "vgg16",
            Architecture::ResNet18 => "resnet18",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alexnet" => Ok(Architecture::AlexNet),
            "vgg16" | "vgg" => Ok(Architecture::Vgg16),
            "resnet18" | "resnet" => Ok(Architecture::ResNet18),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub resolution: usize,
    /// Divides every layer width; 1 gives the standard network.
    #[serde(default = "one")]
    pub width_divisor: usize,
}

fn one() -> usize {
    1
}

impl ClassifierSpec {
    pub fn new(architecture: Architecture, num_classes: usize, resolution: usize) -> Self {
        Self {
            architecture,
            num_classes,
            resolution,
            width_divisor: 1,
        }
    }

    pub fn narrowed(mut self, divisor: usize) -> Self {
        self.width_divisor = divisor.max(1);
        self
    }
}

/// Plain-text record stored next to classifier weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub spec: ClassifierSpec,
    pub normalization: Normalization,
    pub dataset: Option<String>,
    pub seed: u64,
    pub schedule: Option<TrainSchedule>,
    pub epochs_trained: usize,
    pub final_accuracy: Option<f64>,
}

/// A classifier network with its weights and input normalization.
#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ClassifierSpec,
    normalization: Normalization,
    store: ParamStore,
    backbone: Backbone,
    probe: Option<Linear>,
}

pub(crate) const PROBE: &str = "cam_probe";

impl Classifier {
    pub fn new(spec: ClassifierSpec, normalization: Normalization, seed: u64) -> Result<Self> {
        Self::with_dtype(spec, normalization, DType::F32, seed)
    }

    pub fn with_dtype(spec: ClassifierSpec, normalization: Normalization, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let backbone = Backbone::new(&mut store, &spec)?;
        Ok(Self {
            spec,
            normalization,
            store,
            backbone,
            probe: None,
        })
    }

    fn rebuild(spec: ClassifierSpec, normalization: Normalization, mut store: ParamStore) -> Result<Self> {
        let backbone = Backbone::new(&mut store, &spec)?;
        let has_probe = store.names().any(|n| n.starts_with(PROBE));
        let probe = if has_probe {
            let width = probe_width(&store)?;
            Some(Linear::new(&mut store, PROBE, width, spec.num_classes)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            normalization,
            store,
            backbone,
            probe,
        })
    }

    /// A copy whose forward passes never produce gradients for, or update,
    /// the shared weights.
    pub fn frozen(&self) -> Result<Self> {
        Self::rebuild(self.spec, self.normalization, self.store.frozen())
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Logits for an already normalized `N×3×H×W` batch.
    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let features = self.backbone.features(x, train)?;
        self.backbone.head(&features)
    }

    /// Logits for a raw `[0, 1]` batch, in evaluation mode.
    pub fn logits_raw(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(&self.normalization.apply(x, 1.0)?, false)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<u32>> {
        crate::nn::argmax_rows(&self.logits_raw(x)?)
    }

    /// Final convolutional feature map for a normalized batch.
    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.backbone.features(x, train)
    }

    /// Class-by-channel weights of a GAP plus linear head: the native head
    /// when the architecture has one, the attached probe otherwise.
    pub fn cam_weights(&self) -> Result<Tensor> {
        if let Some(w) = self.backbone.gap_weights() {
            return Ok(w.detach());
        }
        match &self.probe {
            Some(p) => Ok(p.weight().detach()),
            None => Err(Error::Unsupported(format!(
                "{} has no pooled linear head; train a CAM probe first",
                self.spec.architecture
            ))),
        }
    }

    pub(crate) fn attach_probe(&mut self, width: usize) -> Result<Linear> {
        let probe = Linear::new(&mut self.store, PROBE, width, self.spec.num_classes)?;
        self.probe = Some(probe.clone());
        Ok(probe)
    }

    pub(crate) fn probe_logits(&self, features: &Tensor) -> Result<Option<Tensor>> {
        match &self.probe {
            Some(p) => Ok(Some(p.forward(&global_avg_pool(features)?)?)),
            None => Ok(None),
        }
    }

    /// Writes `path` (safetensors) and a TOML manifest beside it.
    pub fn save(&self, path: impl AsRef<Path>, manifest: &ClassifierManifest) -> Result<()> {
        let path = path.as_ref();
        self.store.save(path)?;
        let text = toml::to_string(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(path.with_extension("toml"), text)?;
        Ok(())
    }

    pub fn manifest(&self, seed: u64) -> ClassifierManifest {
        ClassifierManifest {
            spec: self.spec,
            normalization: self.normalization,
            dataset: None,
            seed,
            schedule: None,
            epochs_trained: 0,
            final_accuracy: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ClassifierManifest)> {
        let path = path.as_ref();
        let manifest_path = path.with_extension("toml");
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = fs::read_to_string(&manifest_path).map_err(|_| Error::MissingCheckpoint(manifest_path.clone()))?;
        let manifest: ClassifierManifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        let mut store = ParamStore::new(DType::F32, manifest.seed);
        store.load(path)?;
        let classifier = Self::rebuild(manifest.spec, manifest.normalization, store)?;
        Ok((classifier, manifest))
    }
}

fn probe_width(store: &ParamStore) -> Result<usize> {
    let w = store
        .tensor(&format!("{PROBE}.weight"))
        .ok_or_else(|| Error::Manifest("probe bias without weight".into()))?;
    Ok(w.dim(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn tiny(arch: Architecture, res: usize) -> Classifier {
        Classifier::new(ClassifierSpec::new(arch, 10, res).narrowed(16), Normalization::IDENTITY, 3).unwrap()
    }

    #[test]
    fn logits_have_class_width() {
        for (arch, res) in [(Architecture::AlexNet, 32), (Architecture::Vgg16, 32), (Architecture::ResNet18, 32), (Architecture::AlexNet, 96)] {
            let net = tiny(arch, res);
            let x = Tensor::rand(0f32, 1.0, (2, 3, res, res), &Device::Cpu).unwrap();
            assert_eq!(net.logits_raw(&x).unwrap().dims(), &[2, 10], "{arch}");
        }
    }

    #[test]
    fn resolution_must_fit_downsampling() {
        let spec = ClassifierSpec::new(Architecture::AlexNet, 10, 48);
        assert!(Classifier::new(spec, Normalization::IDENTITY, 0).is_err());
    }

    #[test]
    fn save_and_load_reproduce_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.safetensors");
        let net = tiny(Architecture::ResNet18, 16);
        net.save(&path, &net.manifest(3)).unwrap();
        let (loaded, manifest) = Classifier::load(&path).unwrap();
        assert_eq!(manifest.spec, *net.spec());
        let x = Tensor::rand(0f32, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let a = net.logits_raw(&x).unwrap().to_vec2::<f32>().unwrap();
        let b = loaded.logits_raw(&x).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
    }
}
