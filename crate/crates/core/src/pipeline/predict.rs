//! Single-clip prediction from a WAV file and a trained checkpoint.

use std::path::Path;

use serde::Serialize;

use crate::dsp::{extract_features, GammatoneBank, Waveform, CLIP_SAMPLES};
use crate::geometry::decode_predictions;
use crate::model::FeatureInput;

use super::train::load_trained_model;
use super::PipelineError;

/// One reported detection.
#[derive(Debug, Clone, Serialize)]
pub struct PredictOutput {
    pub coarse: usize,
    pub fine: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub probability: f64,
}

/// Runs the front end and network on the first second of a stereo 16 kHz
/// file, returning every sector whose detection probability clears
/// `threshold`.
pub fn run_predict(
    wav_path: &Path,
    checkpoint_dir: &Path,
    threshold: f64,
) -> Result<Vec<PredictOutput>, PipelineError> {
    let (left, right) = crate::io::wav::read_stereo(wav_path)?;
    if left.len() < CLIP_SAMPLES {
        return Err(PipelineError::Config(format!(
            "{}: clip is {} samples, need at least {CLIP_SAMPLES} (one second at 16 kHz)",
            wav_path.display(),
            left.len()
        )));
    }
    let left = Waveform::new(left.samples()[..CLIP_SAMPLES].to_vec())?;
    let right = Waveform::new(right.samples()[..CLIP_SAMPLES].to_vec())?;

    let (net, _sidecar) = load_trained_model(checkpoint_dir)?;
    let bank = GammatoneBank::default_64();
    let features = extract_features(&bank, &left, &right)?;
    let pred = net.predict(&FeatureInput::from_features(&features))?;
    let detections = decode_predictions(&net.config().grid, &pred, threshold);
    Ok(detections
        .into_iter()
        .map(|d| PredictOutput {
            coarse: d.sector.coarse,
            fine: d.sector.fine,
            azimuth_deg: d.doa.azimuth_deg(),
            elevation_deg: d.doa.elevation_deg(),
            probability: d.probability,
        })
        .collect())
}
