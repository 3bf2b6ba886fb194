//! Image, palette and index-map types shared by every quantizer, plus the
//! indexed-PNG codec and the rate measurements built on it.

mod codec;
mod metrics;

pub use codec::{decode_indexed_png, decode_png, encode_indexed_png, png_bit_depth};
pub use metrics::{count_distinct_colors, measure_bpp, palette_entropy};

use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

/// An H×W RGB image with channels in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "channel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from a per-pixel closure. Values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for row in 0..height {
            for col in 0..width {
                data.extend(f(row, col).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, color: Rgb) -> Self {
        Self::from_fn(height, width, |_, _| color)
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }

    /// Writes a truecolor PNG (not palettized).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, color: Rgb) {
        let i = (row * self.width + col) * 3;
        for (dst, v) in self.data[i..i + 3].iter_mut().zip(color) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn mean_color(&self) -> Rgb {
        let mut sum = [0f64; 3];
        for p in self.pixels() {
            for k in 0..3 {
                sum[k] += p[k] as f64;
            }
        }
        let n = self.num_pixels() as f64;
        sum.map(|s| (s / n) as f32)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    /// Channel-planar copy (`3×H×W`), the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.num_pixels();
        let mut out = vec![0f32; 3 * n];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            out[i] = p[0];
            out[n + i] = p[1];
            out[2 * n + i] = p[2];
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, planar: &[f32]) -> Result<Self> {
        let n = height * width;
        if planar.len() != 3 * n {
            return Err(Error::Shape(format!(
                "planar buffer of {} values does not match 3x{height}x{width}",
                planar.len()
            )));
        }
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            data.extend([planar[i], planar[n + i], planar[2 * n + i]].map(|v| v.clamp(0.0, 1.0)));
        }
        Self::new(height, width, data)
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A table of RGB colors. Entries produced by a fallback rule (a palette slot
/// no pixel selected) are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<Rgb>,
    fallback: Vec<bool>,
}

impl Palette {
    pub fn new(colors: Vec<Rgb>) -> Self {
        let colors: Vec<Rgb> = colors
            .into_iter()
            .map(|c| c.map(|v| v.clamp(0.0, 1.0)))
            .collect();
        let fallback = vec![false; colors.len()];
        Self { colors, fallback }
    }

    pub(crate) fn with_fallback(colors: Vec<Rgb>, fallback: Vec<bool>) -> Self {
        debug_assert_eq!(colors.len(), fallback.len());
        let mut p = Self::new(colors);
        p.fallback = fallback;
        p
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn color(&self, index: usize) -> Rgb {
        self.colors[index]
    }

    /// True when entry `index` was filled by the empty-slot fallback.
    pub fn is_fallback(&self, index: usize) -> bool {
        self.fallback[index]
    }

    /// Index of the nearest entry under unweighted RGB L2; ties go to the
    /// lowest index.
    pub fn nearest(&self, color: Rgb) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (i, c) in self.colors.iter().enumerate() {
            let d = (0..3).map(|k| (c[k] - color[k]).powi(2)).sum::<f32>();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Per-pixel palette indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    height: usize,
    width: usize,
    indices: Vec<u32>,
}

impl IndexMap {
    pub fn new(height: usize, width: usize, indices: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || indices.len() != height * width {
            return Err(Error::Shape(format!(
                "index map of {} entries does not match {height}x{width}",
                indices.len()
            )));
        }
        Ok(Self {
            height,
            width,
            indices,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.indices[row * self.width + col]
    }

    pub fn validate(&self, palette_size: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i as usize >= palette_size) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index,
                size: palette_size,
            }),
            None => Ok(()),
        }
    }

    /// Builds the image whose pixel `(u, v)` is `palette[index(u, v)]`.
    pub fn lookup(&self, palette: &Palette) -> Result<RgbImage> {
        self.validate(palette.len())?;
        let mut data = Vec::with_capacity(self.indices.len() * 3);
        for &i in &self.indices {
            data.extend(palette.color(i as usize));
        }
        RgbImage::new(self.height, self.width, data)
    }
}

/// A quantized image together with the representation it was built from.
#[derive(Debug, Clone)]
pub struct QuantResult {
    pub image: RgbImage,
    pub palette: Palette,
    pub index_map: IndexMap,
    pub distinct_colors: usize,
    pub bits_per_pixel: f64,
}

impl QuantResult {
    /// Reconstructs by palette lookup, then measures distinct colors and the
    /// indexed-PNG rate.
    pub fn from_parts(palette: Palette, index_map: IndexMap) -> Result<Self> {
        let image = index_map.lookup(&palette)?;
        let encoded = encode_indexed_png(&index_map, &palette)?;
        let bits_per_pixel = measure_bpp(&encoded, image.height(), image.width());
        let distinct_colors = count_distinct_colors(&image);
        Ok(Self {
            image,
            palette,
            index_map,
            distinct_colors,
            bits_per_pixel,
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_indexed_png(&self.index_map, &self.palette)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(RgbImage::new(1, 1, vec![0.0, 1.2, 0.3]).is_err());
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn chw_roundtrip() {
        let img = RgbImage::from_fn(3, 5, |r, c| [r as f32 / 3.0, c as f32 / 5.0, 0.25]);
        let back = RgbImage::from_chw(3, 5, &img.to_chw()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn lookup_matches_palette() {
        let palette = Palette::new(vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let map = IndexMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let img = map.lookup(&palette).unwrap();
        assert_eq!(img.pixel(0, 1), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(1, 0), [0.0, 0.0, 1.0]);
        let bad = IndexMap::new(1, 1, vec![2]).unwrap();
        assert!(matches!(
            bad.lookup(&palette),
            Err(Error::IndexOutOfRange { index: 2, size: 2 })
        ));
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let palette = Palette::new(vec![[0.0; 3], [1.0; 3]]);
        assert_eq!(palette.nearest([0.5; 3]), 0);
        assert_eq!(palette.nearest([0.6; 3]), 1);
    }
}
