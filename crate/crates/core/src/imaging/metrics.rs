use std::collections::{BTreeMap, HashSet};

use super::{IndexMap, RgbImage};

/// Encoded size in bits divided by the pixel count. Counts the whole stream,
/// headers included.
pub fn measure_bpp(encoded: &[u8], height: usize, width: usize) -> f64 {
    assert!(height * width > 0, "pixel count must be positive");
    encoded.len() as f64 * 8.0 / (height * width) as f64
}

/// Number of unique RGB triples after rounding each channel to 8 bits.
pub fn count_distinct_colors(image: &RgbImage) -> usize {
    image
        .to_rgb8()
        .chunks_exact(3)
        .map(|p| [p[0], p[1], p[2]])
        .collect::<HashSet<_>>()
        .len()
}

/// Shannon entropy (bits) of the empirical index distribution.
pub fn palette_entropy(index_map: &IndexMap) -> f64 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in index_map.indices() {
        *counts.entry(i).or_default() += 1;
    }
    let n = index_map.indices().len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}
