//! Runs the three classical quantizers at every bit depth on one image and
//! writes the indexed PNGs.
//!
//!     cargo run --release --example classical_quantizers [image.png] [output_dir]

use std::path::PathBuf;

use colorcnn::classical::{median_cut, median_cut_dither, octree_quantize};
use colorcnn::imaging::RgbImage;

fn main() -> colorcnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next().unwrap_or_else(|| "tests/fixtures/natural/natural_00.png".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/classical".into()));
    std::fs::create_dir_all(&out)?;
    let image = RgbImage::load(&input)?;
    println!("{input}: {}×{}", image.height(), image.width());

    type Quantizer = fn(&RgbImage, usize) -> colorcnn::Result<colorcnn::imaging::QuantResult>;
    let methods: [(&str, Quantizer); 3] =
        [("mediancut", median_cut), ("octree", octree_quantize), ("mediancut_dither", median_cut_dither)];
    println!("{:<18} {:>4} {:>7} {:>6}", "method", "bits", "colors", "bpp");
    for (name, quantize) in methods {
        for d in 1..=6u32 {
            let q = quantize(&image, 1 << d)?;
            std::fs::write(out.join(format!("{name}_d{d}.png")), q.encode_png()?)?;
            println!("{name:<18} {d:>4} {:>7} {:>6.3}", q.distinct_colors, q.bits_per_pixel);
        }
    }
    Ok(())
}
