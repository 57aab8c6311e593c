//! Line-delimited dataset manifest: one header record followed by one
//! JSON record per clip.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::SceneSpec;
use crate::geometry::{encode_targets, SectorGrid, TargetGrid};

use super::PipelineError;

pub const MANIFEST_SCHEMA: &str = "auralnet-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub grid: SectorGrid,
    pub seed: u64,
    pub clip_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Clip path relative to the manifest's directory.
    pub clip: String,
    pub split: Split,
    /// Whether the room was part of the training (seen) room set; `None`
    /// for anechoic records.
    pub seen: Option<bool>,
    pub room_id: Option<String>,
    pub snr_db: Option<f64>,
    pub talkers: usize,
    pub spec: SceneSpec,
    pub target: TargetGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    /// Directory the clip paths are relative to.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn clip_path(&self, record: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&record.clip)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), PipelineError> {
    let file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, &manifest.header).map_err(|e| PipelineError::json(path, e))?;
    w.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    for record in &manifest.records {
        serde_json::to_writer(&mut w, record).map_err(|e| PipelineError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| PipelineError::Manifest("empty manifest".into()))?
        .map_err(|e| PipelineError::io(path, e))?;
    let header: ManifestHeader =
        serde_json::from_str(&header_line).map_err(|e| PipelineError::json(path, e))?;
    if header.schema != MANIFEST_SCHEMA {
        return Err(PipelineError::Manifest(format!(
            "unexpected schema {:?}",
            header.schema
        )));
    }
    if header.version != MANIFEST_VERSION {
        return Err(PipelineError::Manifest(format!(
            "unsupported manifest version {}",
            header.version
        )));
    }
    let mut records = Vec::with_capacity(header.clip_count);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            PipelineError::Manifest(format!("record on line {}: {e}", lineno + 2))
        })?;
        records.push(record);
    }
    if records.len() != header.clip_count {
        return Err(PipelineError::Manifest(format!(
            "header declares {} clips, found {}",
            header.clip_count,
            records.len()
        )));
    }
    Ok(DatasetManifest {
        header,
        records,
        base_dir: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    })
}

/// Integrity check: clips resolvable, clip paths unique, and every
/// stored target re-derivable from its scene spec. Returns one line per
/// problem; an empty list means the manifest is consistent.
pub fn verify_manifest(manifest: &DatasetManifest) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen_paths = std::collections::HashSet::new();
    for (k, record) in manifest.records.iter().enumerate() {
        let tag = format!("record {k} ({})", record.clip);
        if !seen_paths.insert(record.clip.clone()) {
            problems.push(format!("{tag}: duplicate clip path"));
        }
        if !manifest.clip_path(record).is_file() {
            problems.push(format!("{tag}: clip file missing"));
        }
        if record.talkers != record.spec.sources.len() {
            problems.push(format!(
                "{tag}: talker count {} does not match {} sources",
                record.talkers,
                record.spec.sources.len()
            ));
        }
        let doas: Vec<_> = record.spec.sources.iter().map(|s| s.doa).collect();
        match encode_targets(&manifest.header.grid, &doas) {
            Ok(derived) => {
                if derived != record.target {
                    problems.push(format!("{tag}: stored target differs from re-encoded spec"));
                }
            }
            Err(e) => problems.push(format!("{tag}: spec does not encode: {e}")),
        }
    }
    problems
}
