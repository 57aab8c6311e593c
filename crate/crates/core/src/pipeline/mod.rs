//! Dataset builds, feature caching, training, evaluation, prediction.

mod eval;
mod featurize;
mod manifest;
mod predict;
mod synth;
mod train;

pub use eval::{build_report, format_text, run_eval, write_csv, EvalCell, EvalReport, EvalRow, DETECTION_THRESHOLD};
pub use featurize::{feature_path, run_featurize, FeaturizeSummary};
pub use manifest::{
    read_manifest, verify_manifest, write_manifest, DatasetManifest, ManifestHeader,
    ManifestRecord, Split,
};
pub use predict::{run_predict, PredictOutput};
pub use synth::{run_synth, SynthConfig, SynthSummary};
pub use train::{load_trained_model, run_train, TrainConfig, TrainOutcome, TrainedSidecar};

use thiserror::Error;

use crate::acoustics::MIN_AZIMUTH_SEPARATION_DEG;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV_VAR: &str = "AURALNET_THREADS";

/// Builds the global rayon pool honoring [`THREADS_ENV_VAR`]. Safe to
/// call more than once; later calls are ignored.
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var(THREADS_ENV_VAR) {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint does not match the model config: {0}")]
    CheckpointMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Acoustics(#[from] crate::acoustics::AcousticsError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Wav(#[from] crate::io::wav::WavError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error(transparent)]
    Record(#[from] crate::dsp::record::RecordError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

impl PipelineError {
    fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether this is a bad-input error (exit code 1) rather than a
    /// runtime failure (exit code 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Manifest(_)
                | PipelineError::EmptySplit { .. }
                | PipelineError::CheckpointMismatch(_)
        )
    }
}

fn validate_separation_floor(
    min_separation_deg: f64,
    allow_small_separation: bool,
) -> Result<(), PipelineError> {
    if min_separation_deg < MIN_AZIMUTH_SEPARATION_DEG && !allow_small_separation {
        return Err(PipelineError::Config(format!(
            "min_separation_deg = {min_separation_deg} is below the {MIN_AZIMUTH_SEPARATION_DEG} degree floor; \
             set allow_small_separation = true to override"
        )));
    }
    Ok(())
}
