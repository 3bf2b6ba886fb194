//! The two forward passes of an (untrained) ColorCNN on one image: the
//! differentiable soft pass used for training and the argmax hard pass used
//! at test time, plus the palette diversity penalty of its probability map.
//!
//!     cargo run --release --example colorcnn_passes [image.png]

use colorcnn::data::Normalization;
use colorcnn::imaging::{count_distinct_colors, RgbImage};
use colorcnn::quantizer::{
    diversity_regularizer, forward_prob_map, hard_quantize_with_map, soft_palette, soft_quantize_with_map,
    QuantizerConfig, UNetConfig,
};

fn main() -> colorcnn::Result<()> {
    let input = std::env::args().nth(1).unwrap_or_else(|| "tests/fixtures/natural/natural_03.png".into());
    let image = RgbImage::load(&input)?;
    for d in [1, 2, 3] {
        let mut config = QuantizerConfig::new(d, Normalization::IDENTITY);
        config.unet = UNetConfig {
            levels: 2,
            base_width: 16,
            head_width: 64,
        };
        let net = config.build_network(42)?;
        let m = forward_prob_map(&net, &image, &config)?;
        let hard = hard_quantize_with_map(&image, &m)?;
        let soft = soft_quantize_with_map(&image, &m)?;
        let used = (0..hard.palette.len()).filter(|&i| !hard.palette.is_fallback(i)).count();
        println!("{d} bit, C = {}", config.num_colors());
        println!("  soft palette {:?}", soft_palette(&image, &m)?.colors());
        println!("  hard pass: {} distinct colors, {used} palette slots used, {:.3} bpp", hard.distinct_colors, hard.bits_per_pixel);
        println!("  soft pass: {} distinct colors", count_distinct_colors(&soft));
        println!("  diversity penalty R = {:.4} (max {})", diversity_regularizer(&m)?, d);
    }
    Ok(())
}
