//! Volumes, the RVF file format, dataset manifests, synthetic data and
//! batching.

mod batch;
pub mod rvf;
mod synthetic;

pub use batch::{Batch, BatchIter};
pub use rvf::{load_volume, write_volume, VolumeError};
pub use synthetic::{generate_synthetic, SignalKind, SyntheticParams};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architecture::Axis;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Volume { path: PathBuf, source: VolumeError },
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Ground-truth slice carrying planted signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignalSlice {
    pub axis: Axis,
    pub position: usize,
}

/// One labelled sample, `data: [c, d, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    pub data: Tensor<f32>,
    pub label: usize,
    /// Known only for synthetic volumes; `Some(empty)` for signal-free ones.
    pub signal_slices: Option<Vec<SignalSlice>>,
}

impl Volume {
    /// `[d, h, w]`
    pub fn spatial_shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }
}

/// Clamps to `[lo, hi]`, then optionally maps `lo → 0` and `hi → 1`.
pub fn clip_window(
    v: &Volume,
    lo: f32,
    hi: f32,
    rescale_to_unit: bool,
) -> Result<Volume, DataError> {
    // rejects NaN bounds too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(lo < hi) {
        return Err(DataError::Invalid(format!(
            "window lower bound {lo} must be below {hi}"
        )));
    }
    let span = hi - lo;
    let data = v.data.map(|x| {
        let c = x.clamp(lo, hi);
        if rescale_to_unit {
            (c - lo) / span
        } else {
            c
        }
    });
    Ok(Volume { data, ..v.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                DataError::Invalid(format!("unknown split {s:?}; expected train, val or test"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_slices: Option<Vec<SignalSlice>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub n_classes: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticParams>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), String> {
        if self.version != MANIFEST_VERSION {
            return Err(format!("unsupported manifest version {}", self.version));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.label >= self.n_classes {
                return Err(format!(
                    "{}: label {} outside [0, {})",
                    e.file, e.label, self.n_classes
                ));
            }
            // Splits are disjoint iff no file appears twice.
            if !seen.insert(e.file.as_str()) {
                return Err(format!("{} listed more than once", e.file));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// A manifest with its volumes in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub volumes: Vec<Volume>,
}

impl Dataset {
    /// Reads a manifest and every volume it lists.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.into(),
            source,
        })?;
        let bad = |msg: String| DataError::Manifest {
            path: path.into(),
            msg,
        };
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        manifest.validate().map_err(bad)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut volumes = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let file = dir.join(&e.file);
            let mut v = load_volume(&file).map_err(|source| DataError::Volume {
                path: file.clone(),
                source,
            })?;
            if v.label != e.label {
                return Err(bad(format!(
                    "{}: file label {} disagrees with manifest label {}",
                    e.file, v.label, e.label
                )));
            }
            v.signal_slices = e.signal_slices.clone();
            volumes.push(v);
        }
        Ok(Self { manifest, volumes })
    }

    /// Writes every volume and `manifest.json` into `dir`, creating it.
    /// Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DataError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (e, v) in self.manifest.entries.iter().zip(&self.volumes) {
            let file = dir.join(&e.file);
            write_volume(&file, v).map_err(|source| DataError::Volume { path: file, source })?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, self.manifest.to_json()).map_err(io(&path))?;
        Ok(path)
    }

    /// Indices of a split in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.volumes.len())
            .filter(|&i| self.manifest.entries[i].split == split)
            .collect()
    }

    /// Batches of one split. With `shuffle = Some((seed, epoch))` the order is
    /// a permutation determined by both values; otherwise manifest order.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        shuffle: Option<(u64, u64)>,
    ) -> Result<BatchIter<'_>, DataError> {
        BatchIter::new(self, split, batch_size, shuffle)
    }
}
