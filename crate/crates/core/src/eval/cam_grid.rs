use std::fs;
use std::path::Path;

use super::Method;
use crate::classifier::{class_activation_map, ActivationMap, Classifier};
use crate::error::{Error, Result};
use crate::imaging::{Rgb, RgbImage};

const TOP_FRACTION: f64 = 0.2;
const GAP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CamComparison {
    pub rows: usize,
    /// `original` followed by one label per method.
    pub columns: Vec<String>,
    /// Mean top-20% IoU between each method's map and the original's,
    /// in method order.
    pub mean_iou: Vec<f64>,
}

/// Blue to red through green, for values in `[0, 1]`.
fn heat(v: f32) -> Rgb {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

fn overlay(image: &RgbImage, map: &ActivationMap) -> RgbImage {
    RgbImage::from_fn(image.height(), image.width(), |r, c| {
        let p = image.pixel(r, c);
        let h = heat(map.get(r, c));
        [0.5 * p[0] + 0.5 * h[0], 0.5 * p[1] + 0.5 * h[1], 0.5 * p[2] + 0.5 * h[2]]
    })
}

fn blit(canvas: &mut RgbImage, tile: &RgbImage, top: usize, left: usize) {
    for r in 0..tile.height() {
        for c in 0..tile.width() {
            canvas.set_pixel(top + r, left + c, tile.pixel(r, c));
        }
    }
}

/// CAMs for `classes[i]` on each original image and on its quantized
/// versions. Writes a PNG grid with one row per image and, per column, the
/// image next to its CAM overlay.
pub fn cam_comparison(
    classifier: &Classifier,
    images: &[RgbImage],
    classes: &[usize],
    methods: &[(String, Method<'_>)],
    bit_depth: u32,
    out: impl AsRef<Path>,
) -> Result<CamComparison> {
    if images.is_empty() || images.len() != classes.len() {
        return Err(Error::Config(format!("{} images but {} classes", images.len(), classes.len())));
    }
    let (h, w) = (images[0].height(), images[0].width());
    if images.iter().any(|i| i.height() != h || i.width() != w) {
        return Err(Error::Shape("CAM grid images must share one size".into()));
    }
    // fails early for heads without a linear map on pooled features
    classifier.cam_weights()?;

    let quantized: Vec<Vec<RgbImage>> = methods
        .iter()
        .map(|(_, m)| Ok(m.quantize(images, bit_depth)?.into_iter().map(|q| q.image).collect()))
        .collect::<Result<_>>()?;

    let cols = 1 + methods.len();
    let cell_w = 2 * w + GAP;
    let mut canvas = RgbImage::filled(images.len() * (h + GAP) - GAP, cols * (cell_w + GAP) - GAP, [1.0; 3]);
    let mut iou_sum = vec![0.0; methods.len()];
    for (row, (image, &class)) in images.iter().zip(classes).enumerate() {
        let reference = class_activation_map(classifier, image, class)?;
        let top = row * (h + GAP);
        blit(&mut canvas, image, top, 0);
        blit(&mut canvas, &overlay(image, &reference), top, w + GAP);
        for (m, versions) in quantized.iter().enumerate() {
            let q = &versions[row];
            let map = class_activation_map(classifier, q, class)?;
            iou_sum[m] += reference.top_iou(&map, TOP_FRACTION);
            let left = (m + 1) * (cell_w + GAP);
            blit(&mut canvas, q, top, left);
            blit(&mut canvas, &overlay(q, &map), top, left + w + GAP);
        }
    }
    if let Some(parent) = out.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    canvas.save_png(out)?;

    let mut columns = vec!["original".to_string()];
    columns.extend(methods.iter().map(|(name, _)| name.clone()));
    Ok(CamComparison {
        rows: images.len(),
        columns,
        mean_iou: iou_sum.into_iter().map(|s| s / images.len() as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_endpoints() {
        assert_eq!(heat(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(heat(1.0), [0.5, 0.0, 0.0]);
        assert_eq!(heat(0.5), [0.5, 1.0, 0.5]);
    }
}
