//! Minimal layer toolkit on top of `candle-core` tensors and autograd.

mod conv;
mod optim;
mod store;

pub use conv::conv2d;
pub use optim::{LrSchedule, Sgd};
pub use store::{Init, ParamStore};

use candle_core::{DType, Device, Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let weight = store.param(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            Init::HeNormal { fan_in },
        )?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[c_out], Init::Uniform {
                bound: 1.0 / (fan_in as f64).sqrt(),
            })?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.param(&format!("{name}.weight"), &[d_out, d_in], Init::Uniform { bound })?;
        let bias = store.param(&format!("{name}.bias"), &[d_out], Init::Uniform { bound })?;
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Batch normalization over `(N, H, W)` per channel. Running statistics use
/// momentum 0.1 and the unbiased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[channels], Init::Const(1.0))?,
            beta: store.param(&format!("{name}.bias"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if train {
            let (n, _, h, w) = x.dims4()?;
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn one_hot(labels: &[u32], num_classes: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f32; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * num_classes + l as usize] = 1.0;
    }
    Ok(Tensor::from_vec(data, (labels.len(), num_classes), device)?.to_dtype(dtype)?)
}

/// Mean cross-entropy of `logits` (`B×K`) against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    let targets = one_hot(labels, k, logits.dtype(), logits.device())?;
    let picked = (log_softmax(logits, 1)? * targets)?.sum_all()?;
    Ok((picked * (-1.0 / b as f64))?)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((2, 3))?)
}

/// Non-overlapping `k×k` max pooling; trailing rows and columns that do not
/// fill a window are dropped. Built from reshapes and reductions so the
/// gradient goes in full to each window's maximum.
pub fn max_pool2d(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / k, w / k);
    let x = if (oh * k, ow * k) == (h, w) {
        x.clone()
    } else {
        x.narrow(2, 0, oh * k)?.narrow(3, 0, ow * k)?
    };
    Ok(x.contiguous()?.reshape((b, c, oh, k, ow, k))?.max(5)?.max(3)?)
}

/// Argmax along the last axis, lowest index on ties.
pub fn argmax_rows(x: &Tensor) -> Result<Vec<u32>> {
    let rows = x.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    Ok(rows
        .iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect())
}
