use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{max_pool2d, softmax, BatchNorm2d, Conv2d, ParamStore};

/// Encoder–decoder sizing. Widths double per level starting at `base_width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub levels: usize,
    pub base_width: usize,
    pub head_width: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_width: 64,
            head_width: 256,
        }
    }
}

impl UNetConfig {
    pub fn tiny() -> Self {
        Self {
            levels: 1,
            base_width: 2,
            head_width: 4,
        }
    }

    /// Input sides must be a multiple of this.
    pub fn downsampling(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Debug, Clone)]
struct DoubleConv {
    convs: [Conv2d; 2],
    norms: [BatchNorm2d; 2],
}

impl DoubleConv {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            convs: [
                Conv2d::new(store, &format!("{name}.conv0"), c_in, c_out, 3, 1, 1, false)?,
                Conv2d::new(store, &format!("{name}.conv1"), c_out, c_out, 3, 1, 1, false)?,
            ],
            norms: [
                BatchNorm2d::new(store, &format!("{name}.bn0"), c_out)?,
                BatchNorm2d::new(store, &format!("{name}.bn1"), c_out)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            h = bn.forward(&conv.forward(&h)?, train)?.relu()?;
        }
        Ok(h)
    }
}

/// Nearest-neighbour 2× upsampling built from broadcasts so that its
/// gradient is a plain sum.
fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// U-Net backbone followed by two 1×1 convolutions producing one logit per
/// palette color at every pixel.
#[derive(Debug, Clone)]
pub struct QuantizerNetwork {
    config: UNetConfig,
    num_colors: usize,
    store: ParamStore,
    down: Vec<DoubleConv>,
    up: Vec<DoubleConv>,
    head: [Conv2d; 2],
}

impl QuantizerNetwork {
    pub fn new(config: UNetConfig, num_colors: usize, seed: u64) -> Result<Self> {
        Self::with_dtype(config, num_colors, DType::F32, seed)
    }

    pub fn with_dtype(config: UNetConfig, num_colors: usize, dtype: DType, seed: u64) -> Result<Self> {
        Self::build(config, num_colors, ParamStore::new(dtype, seed))
    }

    pub(crate) fn build(config: UNetConfig, num_colors: usize, mut store: ParamStore) -> Result<Self> {
        if config.levels == 0 || config.base_width == 0 || config.head_width == 0 {
            return Err(Error::Config(format!("degenerate backbone {config:?}")));
        }
        if num_colors < 2 {
            return Err(Error::Config(format!("{num_colors} palette colors; need at least 2")));
        }
        let widths: Vec<usize> = (0..=config.levels).map(|l| config.base_width << l).collect();
        let mut down = vec![DoubleConv::new(&mut store, "down0", 3, widths[0])?];
        for l in 1..=config.levels {
            down.push(DoubleConv::new(&mut store, &format!("down{l}"), widths[l - 1], widths[l])?);
        }
        let mut up = Vec::new();
        for l in (0..config.levels).rev() {
            up.push(DoubleConv::new(&mut store, &format!("up{l}"), widths[l + 1] + widths[l], widths[l])?);
        }
        let head = [
            Conv2d::new(&mut store, "head0", widths[0], config.head_width, 1, 1, 0, true)?,
            Conv2d::new(&mut store, "head1", config.head_width, num_colors, 1, 1, 0, true)?,
        ];
        Ok(Self {
            config,
            num_colors,
            store,
            down,
            up,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn num_colors(&self) -> usize {
        self.num_colors
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Per-pixel color logits `B×C×H×W` for a normalized `B×3×H×W` batch.
    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let factor = self.config.downsampling();
        if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "{h}×{w} input is not divisible by the backbone factor {factor}"
            )));
        }
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut hidden = self.down[0].forward(x, train)?;
        for block in &self.down[1..] {
            skips.push(hidden.clone());
            hidden = block.forward(&max_pool2d(&hidden, 2)?, train)?;
        }
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            hidden = block.forward(&Tensor::cat(&[&upsample2(&hidden)?, &skip], 1)?, train)?;
        }
        let hidden = self.head[0].forward(&hidden)?.relu()?;
        self.head[1].forward(&hidden)
    }

    /// Softmax over the color axis of [`Self::logits`].
    pub fn prob_map(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        softmax(&self.logits(x, train)?, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::new(&[[[[1f32, 2.], [3., 4.]]]], &Device::Cpu).unwrap();
        let y = upsample2(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]);
    }

    #[test]
    fn output_matches_input_size() {
        let net = QuantizerNetwork::new(UNetConfig { levels: 3, base_width: 4, head_width: 8 }, 4, 0).unwrap();
        let x = Tensor::rand(0f32, 1., (2, 3, 16, 24), &Device::Cpu).unwrap();
        assert_eq!(net.logits(&x, true).unwrap().dims(), &[2, 4, 16, 24]);
        let bad = Tensor::rand(0f32, 1., (1, 3, 12, 16), &Device::Cpu).unwrap();
        assert!(matches!(net.logits(&bad, false), Err(Error::Shape(_))));
    }
}
