//! Experiment grids over quantizers and bit depths, their records, plots,
//! ablation tables and CAM comparisons.

mod ablation;
mod cam_grid;
mod curve;
mod desk;
mod stats;

pub use ablation::{ablation_table, AblationRow, AblationVariant};
pub use cam_grid::{cam_comparison, CamComparison};
pub use desk::{desk_classifier, desk_data, desk_quantizer, DeskData, DeskScale};
pub use curve::{rate_accuracy_curve, read_jpeg_points, CurveOutput, JpegPoint};
pub use stats::{mean_std, welch_t_test, TTest};

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classical::{median_cut, median_cut_dither, octree_quantize};
use crate::classifier::{evaluate_top1_images, Classifier};
use crate::data::{load_dataset_with, DatasetName, LabeledImages, LoadOptions, Split};
use crate::error::{Error, Result};
use crate::imaging::{palette_entropy, QuantResult, RgbImage};
use crate::quantizer::{hard_quantize_batch, QuantizerConfig, QuantizerNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuantizerId {
    #[serde(rename = "colorcnn")]
    ColorCnn,
    #[serde(rename = "mediancut")]
    MedianCut,
    #[serde(rename = "octree")]
    Octree,
    #[serde(rename = "mediancut+dither")]
    MedianCutDither,
}

impl QuantizerId {
    pub const ALL: [QuantizerId; 4] = [Self::ColorCnn, Self::MedianCut, Self::Octree, Self::MedianCutDither];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ColorCnn => "colorcnn",
            Self::MedianCut => "mediancut",
            Self::Octree => "octree",
            Self::MedianCutDither => "mediancut+dither",
        }
    }

    pub fn is_classical(self) -> bool {
        self != Self::ColorCnn
    }
}

impl fmt::Display for QuantizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantizerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "colorcnn" => Ok(Self::ColorCnn),
            "mediancut" => Ok(Self::MedianCut),
            "octree" => Ok(Self::Octree),
            "mediancut+dither" | "dither" => Ok(Self::MedianCutDither),
            other => Err(Error::Config(format!("unknown quantizer {other:?}"))),
        }
    }
}

/// A quantizer ready to run: a classical method or a trained network.
pub enum Method<'a> {
    Classical(QuantizerId),
    Learned(&'a QuantizerNetwork, &'a QuantizerConfig),
}

impl Method<'_> {
    pub fn quantize(&self, images: &[RgbImage], bit_depth: u32) -> Result<Vec<QuantResult>> {
        let colors = 1usize << bit_depth;
        match self {
            Method::Classical(QuantizerId::MedianCut) => images.iter().map(|i| median_cut(i, colors)).collect(),
            Method::Classical(QuantizerId::Octree) => images.iter().map(|i| octree_quantize(i, colors)).collect(),
            Method::Classical(QuantizerId::MedianCutDither) => images.iter().map(|i| median_cut_dither(i, colors)).collect(),
            Method::Classical(QuantizerId::ColorCnn) => Err(Error::Config("colorcnn needs a trained network".into())),
            Method::Learned(net, config) => {
                if config.bit_depth != bit_depth {
                    return Err(Error::Config(format!(
                        "checkpoint is for {} bits, asked for {bit_depth}",
                        config.bit_depth
                    )));
                }
                hard_quantize_batch(net, images, config)
            }
        }
    }
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub quantizer: QuantizerId,
    pub bit_depth: u32,
    pub seed: u64,
    pub num_images: usize,
    pub accuracy: f64,
    pub mean_bpp: f64,
    pub mean_distinct_colors: f64,
    pub mean_index_entropy: f64,
    pub wall_time_s: f64,
}

impl ResultRecord {
    /// Equality of every measured field except wall time.
    pub fn same_result(&self, other: &ResultRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        a == *other
    }
}

/// Evaluates one method at one bit depth over a labeled set. When
/// `artifacts` is given, each image's encoded PNG is written there.
pub fn evaluate_cell(
    method: &Method<'_>,
    bit_depth: u32,
    classifier: &Classifier,
    data: &LabeledImages,
    batch_size: usize,
    seed: u64,
    artifacts: Option<&Path>,
) -> Result<ResultRecord> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let start = Instant::now();
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir)?;
    }
    let (mut correct, mut bpp, mut colors, mut entropy) = (0.0, 0.0, 0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let images: Vec<RgbImage> = chunk.iter().map(|&i| data.image(i)).collect();
        let labels: Vec<u32> = chunk.iter().map(|&i| data.label(i)).collect();
        let results = method.quantize(&images, bit_depth)?;
        for (&i, q) in chunk.iter().zip(&results) {
            bpp += q.bits_per_pixel;
            colors += q.distinct_colors as f64;
            entropy += palette_entropy(&q.index_map);
            if let Some(dir) = artifacts {
                fs::write(dir.join(format!("{i:05}.png")), q.encode_png()?)?;
            }
        }
        let quantized: Vec<RgbImage> = results.into_iter().map(|q| q.image).collect();
        correct += evaluate_top1_images(classifier, &quantized, &labels, batch_size)? * chunk.len() as f64;
    }
    let n = data.len() as f64;
    let quantizer = match method {
        Method::Classical(id) => *id,
        Method::Learned(..) => QuantizerId::ColorCnn,
    };
    Ok(ResultRecord {
        quantizer,
        bit_depth,
        seed,
        num_images: data.len(),
        accuracy: correct / n,
        mean_bpp: bpp / n,
        mean_distinct_colors: colors / n,
        mean_index_entropy: entropy / n,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Everything needed to run a quantizer × bit-depth grid on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetName,
    pub dataset_root: PathBuf,
    pub classifier: PathBuf,
    pub quantizers: Vec<QuantizerId>,
    pub bit_depths: Vec<u32>,
    /// ColorCNN checkpoint per bit depth.
    #[serde(default)]
    pub colorcnn: BTreeMap<u32, PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Evaluate only the first this many test images.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub save_artifacts: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    128
}

impl ExperimentSpec {
    pub fn records_path(&self) -> PathBuf {
        self.output_dir.join("records.jsonl")
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantizers.is_empty() || self.bit_depths.is_empty() {
            return Err(Error::Config("the grid needs at least one quantizer and one bit depth".into()));
        }
        if let Some(d) = self.bit_depths.iter().find(|d| !(1..=6).contains(*d)) {
            return Err(Error::Config(format!("bit depth {d} outside 1..=6")));
        }
        if !self.classifier.exists() {
            return Err(Error::MissingCheckpoint(self.classifier.clone()));
        }
        if self.quantizers.contains(&QuantizerId::ColorCnn) {
            for d in &self.bit_depths {
                match self.colorcnn.get(d) {
                    Some(p) if p.exists() => {}
                    Some(p) => return Err(Error::MissingCheckpoint(p.clone())),
                    None => return Err(Error::Config(format!("no colorcnn checkpoint for {d} bits"))),
                }
            }
        }
        Ok(())
    }
}

/// Reads every record in a line-delimited file; a missing file is empty.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => records.push(r),
            // a torn final line from an interrupted run is skipped
            Err(e) => log::warn!("skipping unreadable record in {}: {e}", path.display()),
        }
    }
    Ok(records)
}

/// Appends one record as a JSON line, repairing a torn last line first.
pub fn append_record(path: impl AsRef<Path>, record: &ResultRecord) -> Result<()> {
    let path = path.as_ref();
    let torn = fs::read(path).map(|b| b.last().is_some_and(|&c| c != b'\n')).unwrap_or(false);
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = if torn { "\n".to_string() } else { String::new() };
    line.push_str(&serde_json::to_string(record)?);
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

/// Loads the classifier and test split named by `spec`, then runs the grid.
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    let (classifier, manifest) = Classifier::load(&spec.classifier)?;
    if let Some(ds) = &manifest.dataset {
        if ds != spec.dataset.as_str() {
            return Err(Error::Config(format!("classifier was trained on {ds}, not {}", spec.dataset)));
        }
    }
    let options = LoadOptions {
        verify_counts: spec.limit.is_none(),
    };
    let mut test = load_dataset_with(spec.dataset, &spec.dataset_root, Split::Test, options)?;
    if let Some(limit) = spec.limit {
        let keep: Vec<usize> = (0..limit.min(test.len())).collect();
        test = test.select(&keep);
    }
    run_grid_with(spec, &classifier, &test)
}

/// Runs every (quantizer, bit depth) cell not already present in the
/// record file, appending each finished cell as one line. Returns records
/// in grid order.
pub fn run_grid_with(spec: &ExperimentSpec, classifier: &Classifier, test: &LabeledImages) -> Result<Vec<ResultRecord>> {
    fs::create_dir_all(&spec.output_dir)?;
    let path = spec.records_path();
    let existing = read_records(&path)?;
    let mut out = Vec::new();
    for &quantizer in &spec.quantizers {
        for &d in &spec.bit_depths {
            let done = existing
                .iter()
                .find(|r| r.quantizer == quantizer && r.bit_depth == d && r.seed == spec.seed && r.num_images == test.len());
            if let Some(r) = done {
                log::info!("reusing {quantizer} at {d} bits");
                out.push(r.clone());
                continue;
            }
            let loaded;
            let method = if quantizer == QuantizerId::ColorCnn {
                let ckpt = spec
                    .colorcnn
                    .get(&d)
                    .ok_or_else(|| Error::Config(format!("no colorcnn checkpoint for {d} bits")))?;
                let (net, manifest) = QuantizerNetwork::load(ckpt)?;
                if let Some(ds) = &manifest.dataset {
                    if ds != spec.dataset.as_str() {
                        return Err(Error::Config(format!("{} was trained on {ds}", ckpt.display())));
                    }
                }
                loaded = (net, manifest.config);
                Method::Learned(&loaded.0, &loaded.1)
            } else {
                Method::Classical(quantizer)
            };
            let artifacts = spec
                .save_artifacts
                .then(|| spec.output_dir.join("artifacts").join(format!("{}_d{d}", quantizer.as_str().replace('+', "_"))));
            log::info!("evaluating {quantizer} at {d} bits on {} images", test.len());
            let record = evaluate_cell(&method, d, classifier, test, spec.batch_size, spec.seed, artifacts.as_deref())?;
            append_record(&path, &record)?;
            out.push(record);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in QuantizerId::ALL {
            assert_eq!(id.as_str().parse::<QuantizerId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
    }

    #[test]
    fn torn_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let r = ResultRecord {
            quantizer: QuantizerId::Octree,
            bit_depth: 2,
            seed: 0,
            num_images: 3,
            accuracy: 0.5,
            mean_bpp: 1.0,
            mean_distinct_colors: 4.0,
            mean_index_entropy: 2.0,
            wall_time_s: 0.1,
        };
        append_record(&path, &r).unwrap();
        fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"quant").unwrap();
        assert_eq!(read_records(&path).unwrap(), vec![r.clone()]);
        append_record(&path, &r).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 2);
    }
}
