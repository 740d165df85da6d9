//! JSONL dataset manifest shared by the generator, downloader and trainer.
//!
//! Paths in records are relative to the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{resize_bilinear, RasterError, RasterImage};
use crate::synthworld::Layout;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: RasterError },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icao: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    pub sat_path: PathBuf,
    pub map_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_path: Option<PathBuf>,
    pub split: Split,
    pub palette: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Registered satellite/map images at training resolution.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub id: String,
    pub sat: RasterImage,
    pub map: RasterImage,
}

fn load_image(path: &Path) -> Result<RasterImage> {
    RasterImage::load(path).map_err(|source| DatasetError::Image { path: path.to_path_buf(), source })
}

fn fit(img: RasterImage, size: u32, path: &Path) -> Result<RasterImage> {
    if img.dims() == (size, size) {
        return Ok(img);
    }
    resize_bilinear(&img, size, size).map_err(|source| DatasetError::Image { path: path.to_path_buf(), source })
}

impl DatasetManifest {
    pub fn new(root: PathBuf, records: Vec<ManifestRecord>) -> Self {
        DatasetManifest { root, records }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(f, "{line}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?;
            records.push(r);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { root, records })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Load the sat/map pairs of one split, resized to `size`.
    pub fn load_pairs(&self, split: Split, size: u32) -> Result<Vec<LoadedPair>> {
        let mut out = Vec::new();
        for r in self.split(split) {
            let sp = self.resolve(&r.sat_path);
            let mp = self.resolve(&r.map_path);
            out.push(LoadedPair {
                id: r.id.clone(),
                sat: fit(load_image(&sp)?, size, &sp)?,
                map: fit(load_image(&mp)?, size, &mp)?,
            });
        }
        if out.is_empty() {
            return Err(DatasetError::Empty(format!("no {split:?} records in manifest")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ManifestRecord {
            id: "x".into(),
            icao: Some("KSFO".into()),
            lat: Some(37.6),
            lon: Some(-122.4),
            seed: None,
            layout: Some(Layout::Cross),
            sat_path: "sat/0.png".into(),
            map_path: "map/0.png".into(),
            mask_path: None,
            pair_path: None,
            a_path: None,
            b_path: None,
            split: Split::Val,
            palette: "standard".into(),
        };
        let m = DatasetManifest::new(dir.path().into(), vec![rec.clone(), rec]);
        let p = dir.path().join("manifest.jsonl");
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "\n{nope}\n").unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(DatasetError::Parse { line: 2, .. })));
    }
}
