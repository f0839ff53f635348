//! Dataset manifests.
//!
//! A manifest is a TOML file with one `[[entry]]` table per image:
//!
//! ```toml
//! [[entry]]
//! image_id = "seg03_b0120"
//! image = "images/seg03_b0120.png"
//! truth = "labels/seg03_b0120.txt"
//! detections = "detections/seg03_b0120.txt"
//! ```
//!
//! Relative paths are resolved against the directory holding the manifest.
//! `image` may be omitted for detection-only datasets (e.g. simulated ones);
//! `detections` may be omitted for datasets that have not been run through a
//! detector yet.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: Option<PathBuf>,
    pub truth_path: PathBuf,
    pub detection_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detections: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    entry: Vec<RawEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate image_id `{}`", e.image_id)));
            }
        }
        Ok(())
    }

    /// Parse manifest text, resolving relative paths against `base_dir`.
    /// Does not touch the filesystem.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        let resolve = |p: &str| base_dir.join(p);
        let entries = raw
            .entry
            .into_iter()
            .map(|r| ManifestEntry {
                image_id: r.image_id,
                image_path: r.image.as_deref().map(resolve),
                truth_path: resolve(&r.truth),
                detection_path: r.detections.as_deref().map(resolve),
            })
            .collect();
        DatasetManifest::new(entries)
    }

    /// Load and validate: ids unique, every referenced file present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parent = path.parent().unwrap_or_else(|| Path::new("."));
        let base = std::path::absolute(parent).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text, &base)?;
        m.check_files_exist()?;
        Ok(m)
    }

    pub fn check_files_exist(&self) -> Result<()> {
        for e in &self.entries {
            let paths = e
                .image_path
                .iter()
                .chain(std::iter::once(&e.truth_path))
                .chain(e.detection_path.iter());
            for p in paths {
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "entry `{}`: missing file {}",
                        e.image_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Render as TOML. Paths under `base_dir` are written relative to it.
    pub fn to_toml(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| -> String {
            let p = match (p.is_relative(), base_dir.is_absolute()) {
                (true, true) => std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()),
                _ => p.to_path_buf(),
            };
            p.strip_prefix(base_dir)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let raw = RawManifest {
            entry: self
                .entries
                .iter()
                .map(|e| RawEntry {
                    image_id: e.image_id.clone(),
                    image: e.image_path.as_deref().map(rel),
                    truth: rel(&e.truth_path),
                    detections: e.detection_path.as_deref().map(rel),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("manifest serialization is infallible")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let parent = path.parent().unwrap_or_else(|| Path::new("."));
        let base = std::path::absolute(parent).map_err(|e| Error::io(path, e))?;
        let base = base.as_path();
        crate::io::write_atomic(path, self.to_toml(base).as_bytes())
    }
}
