use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetName;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

/// Checksums of every file under a dataset root, for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceManifest {
    pub dataset: DatasetName,
    pub files: Vec<SourceEntry>,
}

impl SourceManifest {
    pub fn scan(dataset: DatasetName, root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut paths = Vec::new();
        collect(root, &mut paths)?;
        paths.sort();
        let mut files = Vec::with_capacity(paths.len());
        for path in paths {
            let bytes = fs::read(&path)?;
            files.push(SourceEntry {
                path: path.strip_prefix(root).unwrap_or(&path).to_path_buf(),
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        Ok(Self { dataset, files })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::Ingestion {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_source_manifest(dataset: DatasetName, root: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<SourceManifest> {
    let manifest = SourceManifest::scan(dataset, root)?;
    fs::write(out, manifest.to_toml()?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_known_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"abc").unwrap();
        let m = SourceManifest::scan(DatasetName::Cifar10, dir.path()).unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(m.to_toml().unwrap().contains("cifar10"));
    }
}
