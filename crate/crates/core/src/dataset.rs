//! Face samples and the JSONL dataset manifest.
//!
//! One object per line:
//! `{"id"?, "image_path"?, "features"?, "landmark_path"?, "exif"?, "label"?}`.
//! Exactly one of `image_path` (binary PPM) and `features` is given. Relative
//! paths resolve against the manifest's directory. Without an inline `exif`
//! object the tags are parsed from the image bytes; a PPM carries none.
//! `label` is the ground-truth class for evaluation (1 = generated).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exif::{parse_exif, ExifError, ExifRecord};
use crate::image::{ImageError, ImageRGB, LandmarkSet};
use crate::model::SampleInput;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{path}: {source}")]
    Exif { path: PathBuf, source: ExifError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub id: String,
    pub input: SampleInput,
    pub exif: ExifRecord,
    pub landmarks: Option<LandmarkSet>,
    /// Ground-truth class for evaluation: 1 = generated, 0 = photographic.
    pub label: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exif: Option<ExifRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| DatasetError::Manifest {
            line: n + 1,
            message: e.to_string(),
        })?;
        if entry.image_path.is_some() == entry.features.is_some() {
            return Err(DatasetError::Manifest {
                line: n + 1,
                message: "exactly one of image_path and features is required".into(),
            });
        }
        if entry.label.is_some_and(|l| l > 1) {
            return Err(DatasetError::Manifest {
                line: n + 1,
                message: "label must be 0 or 1".into(),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Loads every sample of a manifest.
pub fn load_samples(manifest: &Path) -> Result<Vec<FaceSample>, DatasetError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .enumerate()
        .map(|(i, e)| load_entry(base, i, e))
        .collect()
}

fn load_entry(base: &Path, index: usize, e: ManifestEntry) -> Result<FaceSample, DatasetError> {
    let resolve = |p: &str| base.join(p);
    let id =
        e.id.clone()
            .or_else(|| e.image_path.clone())
            .unwrap_or_else(|| format!("sample-{index}"));
    let (input, parsed_exif) = match (&e.image_path, e.features) {
        (Some(p), _) => {
            let path = resolve(p);
            let bytes = fs::read(&path).map_err(|source| DatasetError::Io {
                path: path.clone(),
                source,
            })?;
            let exif = match &e.exif {
                Some(r) => *r,
                None if bytes.starts_with(b"P6") => ExifRecord::default(),
                None => parse_exif(&bytes).map_err(|source| DatasetError::Exif {
                    path: path.clone(),
                    source,
                })?,
            };
            let img = ImageRGB::decode_ppm(&bytes).map_err(|source| DatasetError::Image { path, source })?;
            (SampleInput::Image(img), exif)
        }
        (None, Some(f)) => (SampleInput::Features(f), e.exif.unwrap_or_default()),
        (None, None) => unreachable!("validated by read_manifest"),
    };
    let landmarks = match &e.landmark_path {
        Some(p) => {
            let path = resolve(p);
            Some(LandmarkSet::load(&path).map_err(|source| DatasetError::Image { path, source })?)
        }
        None => None,
    };
    Ok(FaceSample {
        id,
        input,
        exif: parsed_exif.sanitized(),
        landmarks,
        label: e.label,
    })
}
