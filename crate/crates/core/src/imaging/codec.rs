use std::io::Cursor;

use super::{to_u8, IndexMap, Palette, RgbImage};
use crate::error::{Error, Result};

/// Smallest PNG indexed bit depth whose index range covers `palette_size`.
pub fn png_bit_depth(palette_size: usize) -> Result<u8> {
    match palette_size {
        0 => Err(Error::Config("cannot encode an empty palette".into())),
        1..=2 => Ok(1),
        3..=4 => Ok(2),
        5..=16 => Ok(4),
        17..=256 => Ok(8),
        n => Err(Error::UnsupportedPalette(n)),
    }
}

/// Encodes `(index_map, palette)` as an indexed-color PNG.
///
/// Palette entries are rounded to 8 bits per channel. Compression is fixed at
/// deflate level 9 with no row filtering, so the output is a pure function of
/// the inputs.
pub fn encode_indexed_png(index_map: &IndexMap, palette: &Palette) -> Result<Vec<u8>> {
    let depth = png_bit_depth(palette.len())?;
    index_map.validate(palette.len())?;

    let (h, w) = (index_map.height(), index_map.width());
    let per_byte = 8 / depth as usize;
    let row_bytes = w.div_ceil(per_byte);
    let mut packed = vec![0u8; row_bytes * h];
    for row in 0..h {
        let out = &mut packed[row * row_bytes..(row + 1) * row_bytes];
        for col in 0..w {
            let idx = index_map.get(row, col) as u8;
            let shift = 8 - depth as usize * (col % per_byte + 1);
            out[col / per_byte] |= idx << shift;
        }
    }

    let plte: Vec<u8> = palette.colors().iter().flatten().map(|&v| to_u8(v)).collect();

    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, w as u32, h as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(match depth {
            1 => png::BitDepth::One,
            2 => png::BitDepth::Two,
            4 => png::BitDepth::Four,
            _ => png::BitDepth::Eight,
        });
        encoder.set_palette(plte);
        encoder.set_deflate_compression(png::DeflateCompression::Level(9));
        encoder.set_filter(png::Filter::NoFilter);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&packed)?;
        writer.finish()?;
    }
    Ok(bytes)
}

/// Decodes any PNG to an RGB image (palettes expanded, alpha dropped).
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Indexed => {
            return Err(Error::Unsupported("palette was not expanded".into()))
        }
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        let line = &buf[row * info.line_size..];
        for col in 0..w {
            let px = &line[col * channels..(col + 1) * channels];
            if channels >= 3 {
                rgb.extend_from_slice(&px[..3]);
            } else {
                rgb.extend_from_slice(&[px[0]; 3]);
            }
        }
    }
    RgbImage::from_rgb8(h, w, &rgb)
}

/// Decodes an indexed-color PNG back to its raw indices and 8-bit palette.
pub fn decode_indexed_png(bytes: &[u8]) -> Result<(IndexMap, Palette)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth as u8)
    };
    if color != png::ColorType::Indexed {
        return Err(Error::Unsupported(format!("expected indexed PNG, found {color:?}")));
    }
    let palette = {
        let plte = reader
            .info()
            .palette
            .as_ref()
            .ok_or_else(|| Error::Unsupported("indexed PNG without PLTE".into()))?;
        Palette::new(
            plte.chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]].map(|b| b as f32 / 255.0))
                .collect(),
        )
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let per_byte = 8 / depth as usize;
    let mask = ((1u16 << depth) - 1) as u8;
    let mut indices = Vec::with_capacity(w * h);
    for row in 0..h {
        let line = &buf[row * info.line_size..];
        for col in 0..w {
            let shift = 8 - depth as usize * (col % per_byte + 1);
            indices.push(((line[col / per_byte] >> shift) & mask) as u32);
        }
    }
    Ok((IndexMap::new(h, w, indices)?, palette))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_roundtrip() {
        let palette = Palette::new(vec![[0.2, 0.4, 0.6]]);
        let map = IndexMap::new(2, 2, vec![0; 4]).unwrap();
        let bytes = encode_indexed_png(&map, &palette).unwrap();
        let decoded = decode_png(&bytes).unwrap();
        assert_eq!(decoded.num_pixels(), 4);
        let expected = [51u8, 102, 153];
        assert!(decoded.to_rgb8().chunks(3).all(|p| p == expected));
    }

    #[test]
    fn checkerboard_roundtrip() {
        let palette = Palette::new(vec![[0.0; 3], [1.0; 3]]);
        let map = IndexMap::new(4, 4, (0..16).map(|i| ((i / 4 + i % 4) % 2) as u32).collect())
            .unwrap();
        let bytes = encode_indexed_png(&map, &palette).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), map.lookup(&palette).unwrap());
        let (indices, plte) = decode_indexed_png(&bytes).unwrap();
        assert_eq!(indices, map);
        assert_eq!(plte, palette);
    }

    #[test]
    fn bit_depth_selection() {
        assert_eq!(png_bit_depth(1).unwrap(), 1);
        assert_eq!(png_bit_depth(2).unwrap(), 1);
        assert_eq!(png_bit_depth(3).unwrap(), 2);
        assert_eq!(png_bit_depth(16).unwrap(), 4);
        assert_eq!(png_bit_depth(17).unwrap(), 8);
        assert_eq!(png_bit_depth(256).unwrap(), 8);
        assert!(matches!(png_bit_depth(257), Err(Error::UnsupportedPalette(257))));
    }

    #[test]
    fn oversized_palette_is_rejected() {
        let palette = Palette::new(vec![[0.5; 3]; 300]);
        let map = IndexMap::new(1, 1, vec![0]).unwrap();
        assert!(matches!(
            encode_indexed_png(&map, &palette),
            Err(Error::UnsupportedPalette(300))
        ));
    }

    #[test]
    fn encoding_is_deterministic() {
        let palette = Palette::new(vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7], [0.5; 3]]);
        let map = IndexMap::new(5, 7, (0..35).map(|i| (i * 7 % 3) as u32).collect()).unwrap();
        let a = encode_indexed_png(&map, &palette).unwrap();
        let b = encode_indexed_png(&map, &palette).unwrap();
        assert_eq!(a, b);
    }
}
