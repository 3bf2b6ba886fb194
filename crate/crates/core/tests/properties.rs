use proptest::prelude::*;

use colorcnn::classical::{median_cut, median_cut_dither, octree_quantize};
use colorcnn::imaging::{count_distinct_colors, decode_png, encode_indexed_png, IndexMap, Palette, RgbImage};
use colorcnn::quantizer::{
    diversity_regularizer, hard_quantize_with_map, soft_palette, soft_quantize_with_map, ProbabilityMap,
};

fn image_strategy(max_side: usize) -> impl Strategy<Value = RgbImage> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=255, h * w * 3).prop_map(move |bytes| RgbImage::from_rgb8(h, w, &bytes).unwrap())
    })
}

/// Images drawn from a handful of colors, so that merges and empty boxes
/// actually happen.
fn few_color_image(max_side: usize) -> impl Strategy<Value = RgbImage> {
    (1..=max_side, 1..=max_side, prop::collection::vec(any::<[u8; 3]>(), 1..6)).prop_flat_map(|(h, w, colors)| {
        prop::collection::vec(0..colors.len(), h * w).prop_map(move |idx| {
            let bytes: Vec<u8> = idx.iter().flat_map(|&i| colors[i]).collect();
            RgbImage::from_rgb8(h, w, &bytes).unwrap()
        })
    })
}

fn map_strategy(max_side: usize, max_c: usize) -> impl Strategy<Value = (RgbImage, ProbabilityMap)> {
    (1..=max_side, 1..=max_side, 2..=max_c).prop_flat_map(|(h, w, c)| {
        (
            prop::collection::vec(0u8..=255, h * w * 3),
            prop::collection::vec(-6.0f64..6.0, h * w * c),
        )
            .prop_map(move |(bytes, logits)| {
                let mut probs = Vec::with_capacity(logits.len());
                for px in logits.chunks_exact(c) {
                    let e: Vec<f64> = px.iter().map(|l| l.exp()).collect();
                    let s: f64 = e.iter().sum();
                    probs.extend(e.iter().map(|v| v / s));
                }
                (RgbImage::from_rgb8(h, w, &bytes).unwrap(), ProbabilityMap::new(h, w, c, probs).unwrap())
            })
    })
}

/// Weights `λ` with `Σλ·p = x` and `Σλ = 1` over the listed entries, when
/// the normal equations over those entries are nonsingular.
fn barycentric(points: &[[f64; 3]], x: [f64; 3]) -> Option<Vec<f64>> {
    let n = points.len();
    // normal equations of the 4×n system [P; 1ᵀ] λ = [x; 1]
    let col = |j: usize| [points[j][0], points[j][1], points[j][2], 1.0];
    let b = [x[0], x[1], x[2], 1.0];
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..4).map(|k| col(i)[k] * col(j)[k]).sum();
        }
        m[i][n] = (0..4).map(|k| col(i)[k] * b[k]).sum();
    }
    for c in 0..n {
        let pivot = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        m.swap(c, pivot);
        if m[c][c].abs() < 1e-12 {
            return None;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Whether `x` lies in the convex hull of `palette` to within `tol`, by
/// trying every subset of entries.
fn in_convex_hull(palette: &[[f64; 3]], x: [f64; 3], tol: f64) -> bool {
    let c = palette.len();
    (1u32..1 << c).any(|mask| {
        let pts: Vec<[f64; 3]> = (0..c).filter(|j| mask >> j & 1 == 1).map(|j| palette[j]).collect();
        let Some(lambda) = barycentric(&pts, x) else { return false };
        let residual = (0..3)
            .map(|k| (pts.iter().zip(&lambda).map(|(p, l)| p[k] * l).sum::<f64>() - x[k]).abs())
            .fold((lambda.iter().sum::<f64>() - 1.0).abs(), f64::max);
        residual <= tol && lambda.iter().all(|&l| l >= -tol)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classical_quantizers_respect_the_budget(image in image_strategy(12), d in 1u32..=6) {
        let c = 1usize << d;
        prop_assert!(count_distinct_colors(&median_cut(&image, c).unwrap().image) <= c);
        prop_assert!(count_distinct_colors(&octree_quantize(&image, c).unwrap().image) <= c);
        prop_assert!(count_distinct_colors(&median_cut_dither(&image, c).unwrap().image) <= c);
    }

    #[test]
    fn few_color_images_respect_the_budget(image in few_color_image(10), d in 1u32..=3) {
        let c = 1usize << d;
        prop_assert!(median_cut(&image, c).unwrap().distinct_colors <= c);
        prop_assert!(octree_quantize(&image, c).unwrap().distinct_colors <= c);
    }

    #[test]
    fn quantizers_are_deterministic(image in image_strategy(8), d in 1u32..=4) {
        let c = 1usize << d;
        prop_assert_eq!(median_cut(&image, c).unwrap().image, median_cut(&image, c).unwrap().image);
        prop_assert_eq!(octree_quantize(&image, c).unwrap().image, octree_quantize(&image, c).unwrap().image);
        prop_assert_eq!(median_cut_dither(&image, c).unwrap().image, median_cut_dither(&image, c).unwrap().image);
    }

    #[test]
    fn median_cut_palette_is_the_member_mean(image in image_strategy(10), d in 1u32..=4) {
        let q = median_cut(&image, 1 << d).unwrap();
        let mut sums = vec![[0f64; 3]; q.palette.len()];
        let mut counts = vec![0usize; q.palette.len()];
        for (px, &i) in image.pixels().zip(q.index_map.indices()) {
            counts[i as usize] += 1;
            for k in 0..3 {
                sums[i as usize][k] += px[k] as f64;
            }
        }
        for (i, (s, &n)) in sums.iter().zip(&counts).enumerate() {
            if n > 0 {
                for k in 0..3 {
                    prop_assert!((s[k] / n as f64 - q.palette.color(i)[k] as f64).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn indexed_png_roundtrip(h in 1usize..20, w in 1usize..20, c in 1usize..=256, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (state >> 33) as usize };
        let colors: Vec<[f32; 3]> = (0..c).map(|_| [0, 1, 2].map(|_| (next() % 256) as f32 / 255.0)).collect();
        let palette = Palette::new(colors);
        let map = IndexMap::new(h, w, (0..h * w).map(|_| (next() % c) as u32).collect()).unwrap();
        let expected = map.lookup(&palette).unwrap();
        let decoded = decode_png(&encode_indexed_png(&map, &palette).unwrap()).unwrap();
        prop_assert_eq!(decoded.to_rgb8(), expected.to_rgb8());
        prop_assert!(count_distinct_colors(&expected) <= c);
    }

    #[test]
    fn one_hot_maps_make_soft_equal_hard(h in 2usize..10, w in 2usize..10, c in 2usize..8, seed in any::<u64>()) {
        prop_assume!(h * w >= c);
        let mut state = seed | 1;
        let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; state };
        let indices: Vec<u32> = (0..h * w).map(|i| if i < c { i as u32 } else { (next() % c as u64) as u32 }).collect();
        let bytes: Vec<u8> = (0..h * w * 3).map(|_| next() as u8).collect();
        let image = RgbImage::from_rgb8(h, w, &bytes).unwrap();
        let m = ProbabilityMap::one_hot(&IndexMap::new(h, w, indices).unwrap(), c).unwrap();
        let soft = soft_quantize_with_map(&image, &m).unwrap();
        let hard = hard_quantize_with_map(&image, &m).unwrap().image;
        for (a, b) in soft.data().iter().zip(hard.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn regularizer_is_bounded((_, m) in map_strategy(8, 16)) {
        let r = diversity_regularizer(&m).unwrap();
        prop_assert!(r >= 0.0 && r <= (m.channels() as f64).log2());
    }

    #[test]
    fn hard_pass_respects_the_budget((image, m) in map_strategy(8, 16)) {
        let q = hard_quantize_with_map(&image, &m).unwrap();
        prop_assert!(q.distinct_colors <= m.channels());
    }

    #[test]
    fn soft_output_is_a_convex_combination((image, m) in map_strategy(6, 4)) {
        let palette: Vec<[f64; 3]> = soft_palette(&image, &m).unwrap().colors().iter().map(|c| c.map(f64::from)).collect();
        let soft = soft_quantize_with_map(&image, &m).unwrap();
        for x in soft.pixels() {
            prop_assert!(in_convex_hull(&palette, x.map(f64::from), 1e-6), "{x:?} outside {palette:?}");
        }
    }
}
