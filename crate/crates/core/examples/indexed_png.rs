//! Indexed-PNG storage: bit depth per palette size, round trip through the
//! encoder, and how the rate follows the entropy of the index map.
//!
//!     cargo run --release --example indexed_png

use colorcnn::imaging::{
    decode_indexed_png, encode_indexed_png, measure_bpp, palette_entropy, png_bit_depth, IndexMap, Palette,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> colorcnn::Result<()> {
    for size in [2, 4, 8, 16, 32, 64, 256] {
        println!("{size:>3} colors -> {}-bit PNG samples", png_bit_depth(size)?);
    }

    let (h, w) = (64, 64);
    let palette = Palette::new((0..16).map(|i| [i as f32 / 15.0, 0.5, 1.0 - i as f32 / 15.0]).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("\n{:>9} {:>8} {:>6}", "p(other)", "entropy", "bpp");
    for p in [0.0, 0.05, 0.2, 0.5, 1.0] {
        // mostly index 0, with probability p a uniformly random index
        let indices: Vec<u32> = (0..h * w)
            .map(|_| if rng.random::<f64>() < p { rng.random_range(0..16) } else { 0 })
            .collect();
        let map = IndexMap::new(h, w, indices)?;
        let bytes = encode_indexed_png(&map, &palette)?;
        let (decoded, _) = decode_indexed_png(&bytes)?;
        assert_eq!(decoded.indices(), map.indices());
        println!("{p:>9.2} {:>8.3} {:>6.3}", palette_entropy(&map), measure_bpp(&bytes, h, w));
    }
    Ok(())
}
