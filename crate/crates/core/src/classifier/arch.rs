use candle_core::Tensor;

use super::{Architecture, ClassifierSpec};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, max_pool2d, BatchNorm2d, Conv2d, Linear, ParamStore};

fn width(channels: usize, divisor: usize) -> usize {
    (channels / divisor.max(1)).max(1)
}

/// Conv, batch norm, ReLU.
#[derive(Debug, Clone)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), c_in, c_out, 3, 1, 1, false)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// Five 3×3 conv layers and three fully connected layers. The first conv
/// has stride 2; with max pools after conv1, conv2 and conv5 a 32-pixel
/// input reaches the classifier at 2×2, and larger inputs are average
/// pooled down to 2×2.
#[derive(Debug, Clone)]
pub(crate) struct AlexNet {
    convs: Vec<Conv2d>,
    fcs: Vec<Linear>,
    pool_to_two: usize,
}

impl AlexNet {
    fn new(store: &mut ParamStore, spec: &ClassifierSpec) -> Result<Self> {
        let d = spec.width_divisor;
        let widths = [3, width(64, d), width(192, d), width(384, d), width(256, d), width(256, d)];
        let mut convs = Vec::new();
        for i in 0..5 {
            let stride = if i == 0 { 2 } else { 1 };
            convs.push(Conv2d::new(store, &format!("features.{i}"), widths[i], widths[i + 1], 3, stride, 1, true)?);
        }
        let hidden = width(4096, d);
        let flat = widths[5] * 4;
        let fcs = vec![
            Linear::new(store, "classifier.0", flat, hidden)?,
            Linear::new(store, "classifier.1", hidden, hidden)?,
            Linear::new(store, "classifier.2", hidden, spec.num_classes)?,
        ];
        Ok(Self {
            convs,
            fcs,
            pool_to_two: spec.resolution / 32,
        })
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?.relu()?;
            if i < 2 {
                h = max_pool2d(&h, 2)?;
            }
        }
        Ok(h)
    }

    fn head(&self, features: &Tensor) -> Result<Tensor> {
        let mut h = max_pool2d(features, 2)?;
        if self.pool_to_two > 1 {
            h = h.avg_pool2d(self.pool_to_two)?;
        }
        let mut h = h.flatten_from(1)?;
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(&h)?;
            if i + 1 < self.fcs.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

/// VGG16 with batch norm. The fifth max pool is dropped so the last conv
/// block stays spatial; global average pooling feeds one linear layer.
#[derive(Debug, Clone)]
pub(crate) struct Vgg16 {
    blocks: Vec<Vec<ConvBnRelu>>,
    fc: Linear,
}

impl Vgg16 {
    fn new(store: &mut ParamStore, spec: &ClassifierSpec) -> Result<Self> {
        let plan: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
        let mut c_in = 3;
        let mut blocks = Vec::new();
        let mut layer = 0;
        for stage in plan {
            let mut block = Vec::new();
            for &c in stage {
                let c_out = width(c, spec.width_divisor);
                block.push(ConvBnRelu::new(store, &format!("features.{layer}"), c_in, c_out)?);
                c_in = c_out;
                layer += 1;
            }
            blocks.push(block);
        }
        Ok(Self {
            blocks,
            fc: Linear::new(store, "classifier", c_in, spec.num_classes)?,
        })
    }

    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = max_pool2d(&h, 2)?;
            }
            for layer in block {
                h = layer.forward(&h, train)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(store, &format!("{name}.shortcut.conv"), c_in, c_out, 1, stride, 0, false)?,
                BatchNorm2d::new(store, &format!("{name}.shortcut.bn"), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c_in, c_out, 3, stride, 1, false)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), c_out)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), c_out)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// ResNet18 for small images: 3×3 stem without max pool, four stages of two
/// basic blocks, global average pooling and one linear layer.
#[derive(Debug, Clone)]
pub(crate) struct ResNet18 {
    stem: ConvBnRelu,
    blocks: Vec<BasicBlock>,
    fc: Linear,
}

impl ResNet18 {
    fn new(store: &mut ParamStore, spec: &ClassifierSpec) -> Result<Self> {
        let d = spec.width_divisor;
        let stem_width = width(64, d);
        let stem = ConvBnRelu::new(store, "stem", 3, stem_width)?;
        let mut blocks = Vec::new();
        let mut c_in = stem_width;
        for (stage, (&c, stride)) in [64, 128, 256, 512].iter().zip([1, 2, 2, 2]).enumerate() {
            let c_out = width(c, d);
            blocks.push(BasicBlock::new(store, &format!("layer{}.0", stage + 1), c_in, c_out, stride)?);
            blocks.push(BasicBlock::new(store, &format!("layer{}.1", stage + 1), c_out, c_out, 1)?);
            c_in = c_out;
        }
        Ok(Self {
            stem,
            blocks,
            fc: Linear::new(store, "fc", c_in, spec.num_classes)?,
        })
    }

    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = self.stem.forward(x, train)?;
        for block in &self.blocks {
            h = block.forward(&h, train)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Backbone {
    AlexNet(AlexNet),
    Vgg16(Vgg16),
    ResNet18(ResNet18),
}

impl Backbone {
    pub(crate) fn new(store: &mut ParamStore, spec: &ClassifierSpec) -> Result<Self> {
        let factor = spec.architecture.downsampling();
        if spec.resolution == 0 || spec.resolution % factor != 0 {
            return Err(Error::Config(format!(
                "{} needs an input resolution divisible by {factor}, got {}",
                spec.architecture, spec.resolution
            )));
        }
        if spec.num_classes < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        Ok(match spec.architecture {
            Architecture::AlexNet => Backbone::AlexNet(AlexNet::new(store, spec)?),
            Architecture::Vgg16 => Backbone::Vgg16(Vgg16::new(store, spec)?),
            Architecture::ResNet18 => Backbone::ResNet18(ResNet18::new(store, spec)?),
        })
    }

    /// Output of the last convolutional stage.
    pub(crate) fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Backbone::AlexNet(n) => n.features(x),
            Backbone::Vgg16(n) => n.features(x, train),
            Backbone::ResNet18(n) => n.features(x, train),
        }
    }

    pub(crate) fn head(&self, features: &Tensor) -> Result<Tensor> {
        match self {
            Backbone::AlexNet(n) => n.head(features),
            Backbone::Vgg16(n) => n.fc.forward(&global_avg_pool(features)?),
            Backbone::ResNet18(n) => n.fc.forward(&global_avg_pool(features)?),
        }
    }

    /// Class weights over feature channels when the head is GAP plus linear.
    pub(crate) fn gap_weights(&self) -> Option<&Tensor> {
        match self {
            Backbone::AlexNet(_) => None,
            Backbone::Vgg16(n) => Some(n.fc.weight()),
            Backbone::ResNet18(n) => Some(n.fc.weight()),
        }
    }
}
