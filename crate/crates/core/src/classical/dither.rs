use crate::error::{Error, Result};
use crate::imaging::{IndexMap, Palette, QuantResult, RgbImage};

// (row offset, column offset, weight in sixteenths)
const KERNEL: [(usize, isize, f32); 4] = [(0, 1, 7.0), (1, -1, 3.0), (1, 0, 5.0), (1, 1, 1.0)];

/// Floyd–Steinberg error diffusion onto a fixed palette, raster scan order.
///
/// Each pixel snaps to its nearest palette color (RGB L2) and the residual is
/// pushed to unvisited neighbors; diffused values are clamped to `[0, 1]`.
pub fn floyd_steinberg_dither(image: &RgbImage, palette: &Palette) -> Result<QuantResult> {
    if palette.is_empty() {
        return Err(Error::Config("dithering needs a non-empty palette".into()));
    }
    let (h, w) = (image.height(), image.width());
    let mut work = image.data().to_vec();
    let mut indices = Vec::with_capacity(h * w);

    for row in 0..h {
        for col in 0..w {
            let i = (row * w + col) * 3;
            let current = [work[i], work[i + 1], work[i + 2]];
            let idx = palette.nearest(current);
            let chosen = palette.color(idx);
            indices.push(idx as u32);
            let err = [0, 1, 2].map(|k| current[k] - chosen[k]);
            for (dr, dc, weight) in KERNEL {
                let (r, c) = (row + dr, col as isize + dc);
                if r >= h || c < 0 || c as usize >= w {
                    continue;
                }
                let j = (r * w + c as usize) * 3;
                for k in 0..3 {
                    work[j + k] = (work[j + k] + err[k] * weight / 16.0).clamp(0.0, 1.0);
                }
            }
        }
    }

    let index_map = IndexMap::new(h, w, indices)?;
    QuantResult::from_parts(palette.clone(), index_map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_images_pass_through() {
        let palette = Palette::new(vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [0.2, 0.4, 1.0]]);
        let img = RgbImage::from_fn(6, 6, |r, c| palette.color((r + 2 * c) % 3));
        let q = floyd_steinberg_dither(&img, &palette).unwrap();
        assert_eq!(q.image, img);
    }

    #[test]
    fn gray_dithers_to_half_coverage() {
        let img = RgbImage::filled(64, 64, [0.5; 3]);
        let palette = Palette::new(vec![[0.0; 3], [1.0; 3]]);
        let q = floyd_steinberg_dither(&img, &palette).unwrap();
        let mean = q.image.mean_color();
        assert!((mean[0] - 0.5).abs() <= 0.02, "mean {mean:?}");
        assert_eq!(q.distinct_colors, 2);
    }

    #[test]
    fn empty_palette_is_an_error() {
        let img = RgbImage::filled(2, 2, [0.5; 3]);
        assert!(floyd_steinberg_dither(&img, &Palette::new(vec![])).is_err());
    }
}
