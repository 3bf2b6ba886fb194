use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{QuantizerId, ResultRecord};
use crate::error::{Error, Result};

/// One externally measured JPEG operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JpegPoint {
    pub bpp: f64,
    pub accuracy: f64,
}

/// Parses `bpp,accuracy` lines; a non-numeric first line is a header.
pub fn read_jpeg_points(path: impl AsRef<Path>) -> Result<Vec<JpegPoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match fields.as_slice() {
            [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((bpp, accuracy)) => points.push(JpegPoint { bpp, accuracy }),
            None if n == 0 => {}
            None => return Err(Error::Config(format!("{}:{}: expected `bpp,accuracy`", path.display(), n + 1))),
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveOutput {
    pub plot: PathBuf,
    pub table: PathBuf,
    /// Classical methods whose accuracy drops as bit depth grows.
    pub warnings: Vec<String>,
}

const COLORS: [RGBColor; 4] = [RGBColor(214, 39, 40), RGBColor(31, 119, 180), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

/// Accuracy against bits per pixel, one series per quantizer plus an
/// optional dashed JPEG series. Writes `<stem>.svg` and `<stem>.csv`.
pub fn rate_accuracy_curve(records: &[ResultRecord], jpeg: &[JpegPoint], out_dir: impl AsRef<Path>, stem: &str) -> Result<CurveOutput> {
    let mut depths: Vec<u32> = records.iter().map(|r| r.bit_depth).collect();
    depths.sort_unstable();
    depths.dedup();
    if depths.len() < 2 {
        return Err(Error::Config("a rate curve needs records at two or more bit depths".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let mut series: BTreeMap<QuantizerId, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        series.entry(r.quantizer).or_default().push(r);
    }
    let mut warnings = Vec::new();
    let mut table = String::from("series,bit_depth,bpp,accuracy\n");
    for (id, points) in &mut series {
        points.sort_by_key(|r| r.bit_depth);
        for r in points.iter() {
            writeln!(table, "{id},{},{:.6},{:.6}", r.bit_depth, r.mean_bpp, r.accuracy).expect("string write");
        }
        if id.is_classical() {
            for pair in points.windows(2) {
                if pair[1].accuracy < pair[0].accuracy {
                    let msg = format!(
                        "{id}: accuracy falls from {:.4} at {} bits to {:.4} at {} bits",
                        pair[0].accuracy, pair[0].bit_depth, pair[1].accuracy, pair[1].bit_depth
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }
    for p in jpeg {
        writeln!(table, "jpeg,,{:.6},{:.6}", p.bpp, p.accuracy).expect("string write");
    }
    let table_path = out_dir.join(format!("{stem}.csv"));
    fs::write(&table_path, table)?;

    let plot_path = out_dir.join(format!("{stem}.svg"));
    let xs = records.iter().map(|r| r.mean_bpp).chain(jpeg.iter().map(|p| p.bpp));
    let x_max = xs.fold(0.0f64, f64::max).max(1e-3) * 1.1;
    draw(&plot_path, &series, jpeg, x_max).map_err(|e| Error::Unsupported(format!("plot rendering failed: {e}")))?;
    Ok(CurveOutput {
        plot: plot_path,
        table: table_path,
        warnings,
    })
}

fn draw(
    path: &Path,
    series: &BTreeMap<QuantizerId, Vec<&ResultRecord>>,
    jpeg: &[JpegPoint],
    x_max: f64,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max, 0.0..100.0)?;
    chart
        .configure_mesh()
        .x_desc("bits per pixel")
        .y_desc("top-1 accuracy (%)")
        .draw()?;
    for (i, (id, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<(f64, f64)> = points.iter().map(|r| (r.mean_bpp, r.accuracy * 100.0)).collect();
        chart
            .draw_series(LineSeries::new(coords.clone(), color.stroke_width(2)))?
            .label(id.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart.draw_series(coords.into_iter().map(|c| Circle::new(c, 3, color.filled())))?;
    }
    if !jpeg.is_empty() {
        let mut coords: Vec<(f64, f64)> = jpeg.iter().map(|p| (p.bpp, p.accuracy * 100.0)).collect();
        coords.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(DashedLineSeries::new(coords.clone(), 6, 4, BLACK.stroke_width(1)))?
            .label("jpeg")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
        chart.draw_series(coords.into_iter().map(|c| Circle::new(c, 2, BLACK.filled())))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()?;
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(q: QuantizerId, d: u32, acc: f64) -> ResultRecord {
        ResultRecord {
            quantizer: q,
            bit_depth: d,
            seed: 0,
            num_images: 10,
            accuracy: acc,
            mean_bpp: d as f64 * 0.3,
            mean_distinct_colors: (1 << d) as f64,
            mean_index_entropy: d as f64,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn writes_plot_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            record(QuantizerId::MedianCut, 1, 0.4),
            record(QuantizerId::MedianCut, 2, 0.3),
            record(QuantizerId::ColorCnn, 1, 0.7),
            record(QuantizerId::ColorCnn, 2, 0.6),
        ];
        let out = rate_accuracy_curve(&records, &[], dir.path(), "curve").unwrap();
        let svg = fs::read_to_string(&out.plot).unwrap();
        assert!(svg.contains("<svg") && !svg.contains("jpeg"));
        let csv = fs::read_to_string(&out.table).unwrap();
        assert_eq!(csv.lines().count(), 5);
        // only the classical method is expected to be monotone
        assert_eq!(out.warnings.len(), 1);

        let jpeg = [JpegPoint { bpp: 0.2, accuracy: 0.5 }, JpegPoint { bpp: 0.5, accuracy: 0.8 }];
        let out = rate_accuracy_curve(&records, &jpeg, dir.path(), "with_jpeg").unwrap();
        assert!(fs::read_to_string(&out.plot).unwrap().contains("jpeg"));
    }

    #[test]
    fn needs_two_depths() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![record(QuantizerId::Octree, 1, 0.4)];
        assert!(rate_accuracy_curve(&records, &[], dir.path(), "c").is_err());
    }

    #[test]
    fn parses_jpeg_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.csv");
        fs::write(&path, "bpp,accuracy\n0.1, 0.3\n0.4,0.7\n").unwrap();
        assert_eq!(read_jpeg_points(&path).unwrap().len(), 2);
    }
}
