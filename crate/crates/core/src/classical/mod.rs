//! Color-only quantizers used as baselines: median cut, octree, and
//! Floyd–Steinberg dithering as an optional post-step.

mod dither;
mod median_cut;
mod octree;

pub use dither::floyd_steinberg_dither;
pub use median_cut::{median_cut, ColorBox};
pub use octree::{octree_quantize, OctreeNode};

use crate::error::Result;
use crate::imaging::{QuantResult, RgbImage};

/// Median-cut palette followed by error diffusion onto it.
pub fn median_cut_dither(image: &RgbImage, num_colors: usize) -> Result<QuantResult> {
    let (palette, _) = median_cut::median_cut_parts(image, num_colors);
    floyd_steinberg_dither(image, &palette)
}
