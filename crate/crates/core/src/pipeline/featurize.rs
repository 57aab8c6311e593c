//! Feature cache: one binary record per clip, keyed by clip stem.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dsp::record::{read_feature_record, write_feature_record};
use crate::dsp::{extract_features, FeatureSet, GammatoneBank};

use super::manifest::{DatasetManifest, ManifestRecord};
use super::PipelineError;

/// Cache path for a clip: same stem, `.anft` extension, flat directory.
pub fn feature_path(cache_dir: &Path, record: &ManifestRecord) -> PathBuf {
    let stem = Path::new(&record.clip)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| record.clip.replace('/', "_"));
    cache_dir.join(format!("{stem}.anft"))
}

#[derive(Debug, Clone)]
pub struct FeaturizeSummary {
    pub written: usize,
    pub cached: usize,
    /// `(clip, error message)` per record that failed; the run continues
    /// past individual failures.
    pub failures: Vec<(String, String)>,
}

fn is_fresh(cache: &Path, clip: &Path) -> bool {
    let (Ok(cache_meta), Ok(clip_meta)) = (cache.metadata(), clip.metadata()) else {
        return false;
    };
    match (cache_meta.modified(), clip_meta.modified()) {
        (Ok(c), Ok(w)) => c >= w,
        _ => false,
    }
}

/// Extracts features for every manifest record into `cache_dir`.
/// Idempotent: records whose cache entry is newer than the clip are
/// skipped.
pub fn run_featurize(
    manifest: &DatasetManifest,
    cache_dir: &Path,
) -> Result<FeaturizeSummary, PipelineError> {
    std::fs::create_dir_all(cache_dir).map_err(|e| PipelineError::io(cache_dir, e))?;
    let bank = GammatoneBank::default_64();
    let results: Vec<Result<bool, (String, String)>> = manifest
        .records
        .par_iter()
        .map(|record| {
            let clip_path = manifest.clip_path(record);
            let out_path = feature_path(cache_dir, record);
            if is_fresh(&out_path, &clip_path) {
                return Ok(false);
            }
            let work = || -> Result<(), PipelineError> {
                let (left, right) = crate::io::wav::read_stereo(&clip_path)?;
                let features = extract_features(&bank, &left, &right)?;
                let file = std::fs::File::create(&out_path)
                    .map_err(|e| PipelineError::io(&out_path, e))?;
                let mut w = std::io::BufWriter::new(file);
                write_feature_record(&mut w, &features)?;
                Ok(())
            };
            match work() {
                Ok(()) => Ok(true),
                Err(e) => Err((record.clip.clone(), e.to_string())),
            }
        })
        .collect();

    let mut summary = FeaturizeSummary {
        written: 0,
        cached: 0,
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(true) => summary.written += 1,
            Ok(false) => summary.cached += 1,
            Err(failure) => summary.failures.push(failure),
        }
    }
    Ok(summary)
}

/// Loads one record's features from the cache, computing them from the
/// clip when the cache entry is absent.
pub fn load_features(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    record: &ManifestRecord,
    bank: &GammatoneBank,
) -> Result<FeatureSet, PipelineError> {
    let path = feature_path(cache_dir, record);
    if path.is_file() {
        let file = std::fs::File::open(&path).map_err(|e| PipelineError::io(&path, e))?;
        let mut r = std::io::BufReader::new(file);
        return Ok(read_feature_record(&mut r)?);
    }
    let (left, right) = crate::io::wav::read_stereo(&manifest.clip_path(record))?;
    Ok(extract_features(bank, &left, &right)?)
}
