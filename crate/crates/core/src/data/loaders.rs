use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetName, LabeledImages, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Reject splits whose size differs from the published count.
    pub verify_counts: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { verify_counts: true }
    }
}

/// Reads one split from its published archive layout under `root`.
///
/// `root` may point at the extracted archive directory itself or at its
/// parent. Tiny200's test split is the official validation split.
pub fn load_dataset(name: DatasetName, root: impl AsRef<Path>, split: Split) -> Result<LabeledImages> {
    load_dataset_with(name, root, split, LoadOptions::default())
}

pub fn load_dataset_with(
    name: DatasetName,
    root: impl AsRef<Path>,
    split: Split,
    options: LoadOptions,
) -> Result<LabeledImages> {
    let root = root.as_ref();
    let data = match name {
        DatasetName::Cifar10 => load_cifar10(&locate(root, "cifar-10-batches-bin", "test_batch.bin")?, split)?,
        DatasetName::Cifar100 => load_cifar100(&locate(root, "cifar-100-binary", "test.bin")?, split)?,
        DatasetName::Stl10 => load_stl10(&locate(root, "stl10_binary", "test_X.bin")?, split)?,
        DatasetName::Tiny200 => load_tiny200(&locate(root, "tiny-imagenet-200", "wnids.txt")?, split)?,
    };
    let expected = name.descriptor().count(split);
    if options.verify_counts && data.len() != expected {
        return Err(ingestion(root, format!("{} {split:?} has {} images, expected {expected}", name, data.len())));
    }
    Ok(data)
}

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn locate(root: &Path, archive_dir: &str, marker: &str) -> Result<PathBuf> {
    for dir in [root.join(archive_dir), root.to_path_buf()] {
        if dir.join(marker).is_file() {
            return Ok(dir);
        }
    }
    Err(ingestion(root, format!("no {archive_dir} layout found (looked for {marker})")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ingestion(path, e.to_string()))
}

/// Fixed-size records: `label_bytes` leading bytes, then planar 32×32 RGB.
fn read_cifar_records(path: &Path, label_bytes: usize, label_at: usize, pixels: &mut Vec<u8>, labels: &mut Vec<u32>) -> Result<()> {
    const PLANE: usize = 32 * 32;
    let bytes = read(path)?;
    let record = label_bytes + 3 * PLANE;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(ingestion(path, format!("size {} is not a multiple of {record}", bytes.len())));
    }
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_at] as u32);
        let planes = &rec[label_bytes..];
        for p in 0..PLANE {
            pixels.extend_from_slice(&[planes[p], planes[PLANE + p], planes[2 * PLANE + p]]);
        }
    }
    Ok(())
}

fn finish(path: &Path, side: usize, classes: usize, pixels: Vec<u8>, labels: Vec<u32>) -> Result<LabeledImages> {
    LabeledImages::new(side, side, classes, pixels, labels).map_err(|e| ingestion(path, e.to_string()))
}

fn load_cifar10(dir: &Path, split: Split) -> Result<LabeledImages> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for f in files {
        read_cifar_records(&dir.join(f), 1, 0, &mut pixels, &mut labels)?;
    }
    finish(dir, 32, 10, pixels, labels)
}

fn load_cifar100(dir: &Path, split: Split) -> Result<LabeledImages> {
    let file = match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    };
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    // coarse label then fine label; the fine label is the class
    read_cifar_records(&dir.join(file), 2, 1, &mut pixels, &mut labels)?;
    finish(dir, 32, 100, pixels, labels)
}

fn load_stl10(dir: &Path, split: Split) -> Result<LabeledImages> {
    const SIDE: usize = 96;
    const PLANE: usize = SIDE * SIDE;
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let x_path = dir.join(format!("{prefix}_X.bin"));
    let y_path = dir.join(format!("{prefix}_y.bin"));
    let x = read(&x_path)?;
    let y = read(&y_path)?;
    if x.len() != y.len() * 3 * PLANE {
        return Err(ingestion(&x_path, format!("{} bytes for {} labels", x.len(), y.len())));
    }
    let mut labels = Vec::with_capacity(y.len());
    for &l in &y {
        if !(1..=10).contains(&l) {
            return Err(ingestion(&y_path, format!("label {l} outside 1..=10")));
        }
        labels.push(l as u32 - 1);
    }
    // each channel plane is stored column-major
    let mut pixels = Vec::with_capacity(x.len());
    for img in x.chunks_exact(3 * PLANE) {
        for row in 0..SIDE {
            for col in 0..SIDE {
                let at = col * SIDE + row;
                pixels.extend_from_slice(&[img[at], img[PLANE + at], img[2 * PLANE + at]]);
            }
        }
    }
    finish(dir, SIDE, 10, pixels, labels)
}

fn load_tiny200(dir: &Path, split: Split) -> Result<LabeledImages> {
    const SIDE: u32 = 64;
    let wnids_path = dir.join("wnids.txt");
    let text = fs::read_to_string(&wnids_path).map_err(|e| ingestion(&wnids_path, e.to_string()))?;
    let mut wnids: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    wnids.sort_unstable();
    let class_of = |wnid: &str, at: &Path| {
        wnids
            .binary_search(&wnid)
            .map(|i| i as u32)
            .map_err(|_| ingestion(at, format!("unknown class {wnid}")))
    };

    let mut entries: Vec<(PathBuf, u32)> = Vec::new();
    match split {
        Split::Train => {
            for wnid in &wnids {
                let images = dir.join("train").join(wnid).join("images");
                let mut files: Vec<PathBuf> = fs::read_dir(&images)
                    .map_err(|e| ingestion(&images, e.to_string()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .collect();
                files.sort();
                let label = class_of(wnid, &images)?;
                entries.extend(files.into_iter().map(|f| (f, label)));
            }
        }
        Split::Test => {
            let ann = dir.join("val").join("val_annotations.txt");
            let text = fs::read_to_string(&ann).map_err(|e| ingestion(&ann, e.to_string()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut fields = line.split('\t');
                let (Some(file), Some(wnid)) = (fields.next(), fields.next()) else {
                    return Err(ingestion(&ann, format!("malformed line {line:?}")));
                };
                entries.push((dir.join("val").join("images").join(file), class_of(wnid, &ann)?));
            }
        }
    }

    let mut pixels = Vec::with_capacity(entries.len() * (SIDE * SIDE * 3) as usize);
    let mut labels = Vec::with_capacity(entries.len());
    for (path, label) in entries {
        let img = image::open(&path).map_err(|e| ingestion(&path, e.to_string()))?.to_rgb8();
        if img.dimensions() != (SIDE, SIDE) {
            return Err(ingestion(&path, format!("size {:?}, expected 64×64", img.dimensions())));
        }
        pixels.extend_from_slice(img.as_raw());
        labels.push(label);
    }
    finish(dir, SIDE as usize, 200, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_is_an_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        for name in DatasetName::ALL {
            let err = load_dataset(name, dir.path(), Split::Train).unwrap_err();
            assert!(matches!(err, Error::Ingestion { .. }), "{name}: {err}");
        }
    }

    #[test]
    fn truncated_cifar_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("test_batch.bin"), [0u8; 100]).unwrap();
        match load_dataset(DatasetName::Cifar10, dir.path(), Split::Test) {
            Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("test_batch.bin")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
