use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledImages;
use crate::error::Result;
use crate::imaging::{Rgb, RgbImage};

/// Number of classes produced by [`shapes`].
pub const SHAPE_CLASSES: usize = 4;

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn far_color(rng: &mut ChaCha8Rng, from: Rgb) -> Rgb {
    loop {
        let c = random_color(rng);
        let d: f32 = c.iter().zip(&from).map(|(a, b)| (a - b).powi(2)).sum();
        if d > 0.25 {
            return c;
        }
    }
}

/// A small labeled set for experiments without downloaded data: one
/// colored shape on a colored background, with the shape as the class
/// (square, disc, horizontal bar, vertical bar). Position, size, colors and
/// pixel noise vary per image. Labels cycle through the classes in order.
pub fn shapes(per_class: usize, resolution: usize, seed: u64) -> Result<LabeledImages> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * SHAPE_CLASSES;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let res = resolution as f32;
    for i in 0..n {
        let class = i % SHAPE_CLASSES;
        let bg = random_color(&mut rng);
        let fg = far_color(&mut rng, bg);
        let size = res * rng.random_range(0.25..0.45);
        let cy = rng.random_range(size..res - size);
        let cx = rng.random_range(size..res - size);
        let noise = 0.04;
        let image = RgbImage::from_fn(resolution, resolution, |r, c| {
            let (dy, dx) = (r as f32 + 0.5 - cy, c as f32 + 0.5 - cx);
            let inside = match class {
                0 => dy.abs() < size * 0.8 && dx.abs() < size * 0.8,
                1 => dy * dy + dx * dx < size * size,
                2 => dy.abs() < size * 0.3 && dx.abs() < size,
                _ => dx.abs() < size * 0.3 && dy.abs() < size,
            };
            let base = if inside { fg } else { bg };
            base.map(|v| (v + noise * (rng.random::<f32>() - 0.5)).clamp(0.0, 1.0))
        });
        images.push(image);
        labels.push(class as u32);
    }
    LabeledImages::from_images(&images, labels, SHAPE_CLASSES)
}
