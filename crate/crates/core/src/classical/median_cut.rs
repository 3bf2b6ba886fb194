use crate::error::Result;
use crate::imaging::{IndexMap, Palette, QuantResult, Rgb, RgbImage};

/// A set of pixels (by position) and the per-channel range they span.
#[derive(Debug, Clone)]
pub struct ColorBox {
    members: Vec<usize>,
    ranges: [(f32, f32); 3],
}

impl ColorBox {
    fn new(members: Vec<usize>, pixels: &[Rgb]) -> Self {
        debug_assert!(!members.is_empty());
        let mut ranges = [(f32::INFINITY, f32::NEG_INFINITY); 3];
        for &m in &members {
            for (k, range) in ranges.iter_mut().enumerate() {
                range.0 = range.0.min(pixels[m][k]);
                range.1 = range.1.max(pixels[m][k]);
            }
        }
        Self { members, ranges }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ranges(&self) -> [(f32, f32); 3] {
        self.ranges
    }

    /// Channel with the widest range; ties go to the lower channel.
    fn longest_channel(&self) -> (usize, f32) {
        let mut best = (0, self.ranges[0].1 - self.ranges[0].0);
        for k in 1..3 {
            let extent = self.ranges[k].1 - self.ranges[k].0;
            if extent > best.1 {
                best = (k, extent);
            }
        }
        best
    }

    fn splittable(&self) -> bool {
        self.longest_channel().1 > 0.0
    }

    /// Splits at the median along the longest channel. Pixels whose value
    /// equals the median value go to the upper half; when that would leave
    /// the lower half empty the threshold moves to the next larger value.
    fn split(self, pixels: &[Rgb]) -> (ColorBox, ColorBox) {
        let (channel, _) = self.longest_channel();
        let mut sorted = self.members;
        sorted.sort_by(|&a, &b| {
            pixels[a][channel]
                .total_cmp(&pixels[b][channel])
                .then(a.cmp(&b))
        });
        let median = pixels[sorted[sorted.len() / 2]][channel];
        let mut cut = sorted.partition_point(|&m| pixels[m][channel] < median);
        if cut == 0 {
            cut = sorted.partition_point(|&m| pixels[m][channel] <= median);
        }
        let upper = sorted.split_off(cut);
        (ColorBox::new(sorted, pixels), ColorBox::new(upper, pixels))
    }

    fn mean(&self, pixels: &[Rgb]) -> Rgb {
        let mut sum = [0f64; 3];
        for &m in &self.members {
            for k in 0..3 {
                sum[k] += pixels[m][k] as f64;
            }
        }
        let n = self.members.len() as f64;
        sum.map(|s| (s / n) as f32)
    }
}

/// Heckbert median-cut quantization to at most `num_colors` colors.
///
/// The most populated splittable box is split along its longest channel
/// until `num_colors` boxes exist or no box holds more than one color. Each
/// palette entry is the mean of its box.
pub fn median_cut(image: &RgbImage, num_colors: usize) -> Result<QuantResult> {
    let (palette, index_map) = median_cut_parts(image, num_colors);
    QuantResult::from_parts(palette, index_map)
}

pub(crate) fn median_cut_parts(image: &RgbImage, num_colors: usize) -> (Palette, IndexMap) {
    assert!(num_colors >= 1, "median cut needs at least one color");
    let pixels: Vec<Rgb> = image.pixels().collect();
    let mut boxes = vec![ColorBox::new((0..pixels.len()).collect(), &pixels)];

    while boxes.len() < num_colors {
        let candidate = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.splittable())
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i);
        let Some(i) = candidate else { break };
        let (lower, upper) = boxes.swap_remove(i).split(&pixels);
        // keep slot order stable: lower half stays at `i`, upper is appended
        boxes.push(lower);
        let last = boxes.len() - 1;
        boxes.swap(i, last);
        boxes.push(upper);
    }

    let mut indices = vec![0u32; pixels.len()];
    for (slot, b) in boxes.iter().enumerate() {
        for &m in &b.members {
            indices[m] = slot as u32;
        }
    }
    let palette = Palette::new(boxes.iter().map(|b| b.mean(&pixels)).collect());
    let index_map = IndexMap::new(image.height(), image.width(), indices)
        .expect("index map has one entry per pixel");
    (palette, index_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::count_distinct_colors;

    #[test]
    fn two_tone_split() {
        let img = RgbImage::new(2, 2, vec![0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 1.]).unwrap();
        let q = median_cut(&img, 2).unwrap();
        let mut colors = q.palette.colors().to_vec();
        colors.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(colors, vec![[0.0; 3], [1.0; 3]]);
    }

    #[test]
    fn exact_palette_when_colors_fit() {
        let tones = [[0.1, 0.2, 0.3], [0.9, 0.1, 0.1], [0.2, 0.8, 0.4], [0.5, 0.5, 0.9]];
        // skewed counts so median positions fall inside runs of equal values
        let img = RgbImage::from_fn(4, 5, |r, c| tones[((r * 5 + c) * 7 % 11) % 4]);
        let q = median_cut(&img, 4).unwrap();
        let mut got = q.palette.colors().to_vec();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = tones.to_vec();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(q.image, img);
    }

    #[test]
    fn fewer_colors_than_budget() {
        let img = RgbImage::filled(3, 3, [0.4, 0.5, 0.6]);
        let q = median_cut(&img, 8).unwrap();
        assert_eq!(q.palette.len(), 1);
        assert_eq!(q.distinct_colors, 1);
    }

    #[test]
    fn palette_entries_are_box_means() {
        let img = RgbImage::from_fn(8, 8, |r, c| {
            [(r * 8 + c) as f32 / 64.0, ((r * 3 + c * 5) % 8) as f32 / 8.0, 0.5]
        });
        let q = median_cut(&img, 4).unwrap();
        assert!(count_distinct_colors(&q.image) <= 4);
        for (slot, color) in q.palette.colors().iter().enumerate() {
            let members: Vec<Rgb> = img
                .pixels()
                .zip(q.index_map.indices())
                .filter(|(_, &i)| i as usize == slot)
                .map(|(p, _)| p)
                .collect();
            for k in 0..3 {
                let mean = members.iter().map(|p| p[k] as f64).sum::<f64>() / members.len() as f64;
                assert!((mean - color[k] as f64).abs() < 1e-6);
            }
        }
    }
}
