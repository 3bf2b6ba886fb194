//! Batched, differentiable palette and reconstruction operations.
//!
//! Images are `B×3×H×W`, probability maps `B×C×H×W`, palettes `B×C×3`.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Added to every per-color weight sum before dividing.
pub const SOFT_EPS: f64 = 1e-8;

fn flat(t: &Tensor) -> Result<(Tensor, usize, usize, usize, usize)> {
    let (b, c, h, w) = t.dims4()?;
    Ok((t.reshape((b, c, h * w))?, b, c, h, w))
}

/// Probability-weighted mean color per palette slot.
pub fn soft_palette_tensor(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (xf, bx, ch, hx, wx) = flat(x)?;
    let (mf, b, _, h, w) = flat(m)?;
    if (bx, ch, hx, wx) != (b, 3, h, w) {
        return Err(Error::Shape(format!("image {:?} does not match map {:?}", x.dims(), m.dims())));
    }
    let num = mf.matmul(&xf.transpose(1, 2)?.contiguous()?)?;
    let den = (mf.sum_keepdim(2)? + SOFT_EPS)?;
    Ok(num.broadcast_div(&den)?)
}

/// Every pixel becomes the probability-weighted sum of palette colors.
pub fn soft_reconstruct_tensor(palette: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (mf, b, _, h, w) = flat(m)?;
    let out = palette.transpose(1, 2)?.contiguous()?.matmul(&mf)?;
    Ok(out.reshape((b, 3, h, w))?)
}

/// Per-sample diversity penalty `log2(C) · (1 − mean_c max_pixels m_c)`.
pub fn diversity_tensor(m: &Tensor) -> Result<Tensor> {
    let (mf, _, c, _, _) = flat(m)?;
    let peak = mf.max(2)?.mean(1)?;
    Ok(((peak.neg()? + 1.0)? * (c as f64).log2())?)
}

/// Adds `xi` times i.i.d. standard Gaussian noise to every element.
pub fn apply_color_jitter<R: Rng>(x: &Tensor, xi: f64, rng: &mut R) -> Result<Tensor> {
    if xi == 0.0 {
        return Ok(x.clone());
    }
    let noise: Vec<f64> = (0..x.elem_count()).map(|_| rng.sample(StandardNormal)).collect();
    let noise = Tensor::from_vec(noise, x.shape(), &Device::Cpu)?.to_dtype(x.dtype())?;
    Ok((x + (noise * xi)?)?)
}

/// Value of a single-element tensor.
pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_map_gives_global_mean() {
        let x = Tensor::new(&[[[[0.0f64, 1.0]], [[0.2, 0.4]], [[1.0, 1.0]]]], &Device::Cpu).unwrap();
        let m = Tensor::full(0.5f64, (1, 2, 1, 2), &Device::Cpu).unwrap();
        let t = soft_palette_tensor(&x, &m).unwrap().to_vec3::<f64>().unwrap();
        for slot in &t[0] {
            for (v, want) in slot.iter().zip([0.5, 0.3, 1.0]) {
                assert!((v - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn diversity_half_max() {
        let m = Tensor::full(0.5f64, (1, 2, 2, 2), &Device::Cpu).unwrap();
        let r = diversity_tensor(&m).unwrap().to_vec1::<f64>().unwrap();
        assert!((r[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn jitter_zero_is_identity_and_seeded() {
        let x = Tensor::rand(0f32, 1., (2, 3, 4, 4), &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = apply_color_jitter(&x, 0.0, &mut rng).unwrap();
        assert_eq!(same.flatten_all().unwrap().to_vec1::<f32>().unwrap(), x.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        let a = apply_color_jitter(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = apply_color_jitter(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap(), b.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    }
}
