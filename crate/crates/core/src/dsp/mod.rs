//! Binaural feature front end: log-gammatone power spectrograms plus
//! whitened cross-correlation coefficients.

mod gammatone;
mod gcc;
pub mod record;

pub use gammatone::{erb_hz, erb_space, GammatoneBank};
pub use gcc::gcc_phat;

use thiserror::Error;

/// Fixed processing rate; every waveform in the pipeline is 16 kHz.
pub const SAMPLE_RATE_HZ: usize = 16_000;
/// Samples per one-second clip.
pub const CLIP_SAMPLES: usize = 16_000;
/// Analysis frame length: 50 ms.
pub const FRAME_SAMPLES: usize = 800;
/// Frame hop: 50% overlap.
pub const HOP_SAMPLES: usize = 400;
/// Frames per one-second clip: floor((16000 - 800) / 400) + 1.
pub const CLIP_FRAMES: usize = 39;
/// Gammatone bands in the front end.
pub const NUM_BANDS: usize = 64;
/// Cross-correlation lag range in samples (+-1 ms at 16 kHz).
pub const CC_MAX_LAG_SAMPLES: usize = 16;
/// Cross-correlation vector length.
pub const CC_LEN: usize = 2 * CC_MAX_LAG_SAMPLES + 1;
/// Floor inside the log of the power spectrogram.
pub const LOG_POWER_EPSILON: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("waveform lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("waveform contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("expected {expected} samples, got {got}")]
    BadClipLength { expected: usize, got: usize },
}

/// A mono sample buffer at the fixed 16 kHz rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self, DspError> {
        if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::NonFinite(idx));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    fn require_clip_length(&self) -> Result<(), DspError> {
        if self.len() != CLIP_SAMPLES {
            return Err(DspError::BadClipLength {
                expected: CLIP_SAMPLES,
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Log-power time-frequency matrix, `frames x bands` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bands: usize,
    values: Vec<f64>,
}

impl Spectrogram {
    pub(crate) fn from_parts(frames: usize, bands: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * bands);
        Self {
            frames,
            bands,
            values,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn value(&self, frame: usize, band: usize) -> f64 {
        self.values[frame * self.bands + band]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The 33 whitened cross-correlation coefficients, indexed by lag
/// -16..=16 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CcVector {
    coefficients: [f64; CC_LEN],
}

impl CcVector {
    pub fn new(coefficients: [f64; CC_LEN]) -> Self {
        Self { coefficients }
    }

    pub fn coefficient(&self, lag: i32) -> f64 {
        debug_assert!(lag.unsigned_abs() as usize <= CC_MAX_LAG_SAMPLES);
        self.coefficients[(lag + CC_MAX_LAG_SAMPLES as i32) as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coefficients
    }

    /// `(lag, value)` of the largest coefficient.
    pub fn argmax(&self) -> (i32, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.coefficients.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 as i32 - CC_MAX_LAG_SAMPLES as i32, best.1)
    }

    /// `(lag, signed value)` of the coefficient with the largest magnitude.
    pub fn argmax_abs(&self) -> (i32, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.coefficients.iter().enumerate() {
            if v.abs() > best.1 {
                best = (i, v.abs());
            }
        }
        (
            best.0 as i32 - CC_MAX_LAG_SAMPLES as i32,
            self.coefficients[best.0],
        )
    }
}

/// Network input for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub left: Spectrogram,
    pub right: Spectrogram,
    pub cc: CcVector,
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Frames each band signal into 50 ms Hamming-windowed segments with 50%
/// overlap and takes the log of the mean windowed power per frame.
pub fn frame_log_power(band_signals: &[Vec<f64>]) -> Result<Spectrogram, DspError> {
    let bands = band_signals.len();
    let len = band_signals.first().map(|b| b.len()).unwrap_or(0);
    for b in band_signals {
        if b.len() != len {
            return Err(DspError::LengthMismatch {
                left: len,
                right: b.len(),
            });
        }
    }
    if len < FRAME_SAMPLES {
        return Err(DspError::BadClipLength {
            expected: FRAME_SAMPLES,
            got: len,
        });
    }
    let frames = (len - FRAME_SAMPLES) / HOP_SAMPLES + 1;
    let window = hamming(FRAME_SAMPLES);
    let mut values = vec![0.0; frames * bands];
    for (b, signal) in band_signals.iter().enumerate() {
        for t in 0..frames {
            let start = t * HOP_SAMPLES;
            let mut power = 0.0;
            for (n, &w) in window.iter().enumerate() {
                let s = w * signal[start + n];
                power += s * s;
            }
            power /= FRAME_SAMPLES as f64;
            values[t * bands + b] = (power + LOG_POWER_EPSILON).ln();
        }
    }
    Ok(Spectrogram {
        frames,
        bands,
        values,
    })
}

/// Runs one ear's waveform through the filterbank and framing stage.
pub fn gammatone_spectrogram(
    bank: &GammatoneBank,
    wave: &Waveform,
) -> Result<Spectrogram, DspError> {
    let band_signals = bank.filter_all(wave.samples());
    frame_log_power(&band_signals)
}

/// Full front end for a two-channel one-second clip: per-ear log-gammatone
/// spectrograms plus the GCC-PHAT vector.
pub fn extract_features(
    bank: &GammatoneBank,
    left: &Waveform,
    right: &Waveform,
) -> Result<FeatureSet, DspError> {
    left.require_clip_length()?;
    right.require_clip_length()?;
    Ok(FeatureSet {
        left: gammatone_spectrogram(bank, left)?,
        right: gammatone_spectrogram(bank, right)?,
        cc: gcc_phat(left, right)?,
    })
}
