//! WAV reading and writing at the fixed 16 kHz pipeline rate.
//!
//! Readable inputs are 16-bit integer or 32-bit float PCM. Clips are
//! written as 32-bit float stereo so synthesis output survives the
//! round trip without quantization.

use std::path::Path;

use thiserror::Error;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: hound::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: hound::Error,
    },
    #[error("{path}: sample rate {found} Hz, expected {expected} Hz")]
    WrongSampleRate {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {found} channel(s), expected {expected}; re-record or convert the file")]
    WrongChannelCount {
        path: String,
        found: u16,
        expected: u16,
    },
    #[error("{path}: unsupported sample format ({bits}-bit {kind}); use 16-bit PCM or 32-bit float")]
    UnsupportedFormat {
        path: String,
        bits: u16,
        kind: &'static str,
    },
    #[error("waveform error: {0}")]
    Dsp(#[from] crate::dsp::DspError),
}

fn read_samples(path: &Path, expect_channels: u16) -> Result<Vec<Vec<f64>>, WavError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|source| WavError::Read {
        path: display.clone(),
        source,
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE_HZ as u32 {
        return Err(WavError::WrongSampleRate {
            path: display,
            found: spec.sample_rate,
            expected: SAMPLE_RATE_HZ as u32,
        });
    }
    if spec.channels != expect_channels {
        return Err(WavError::WrongChannelCount {
            path: display,
            found: spec.channels,
            expected: expect_channels,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|source| WavError::Read {
                path: display.clone(),
                source,
            })?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|source| WavError::Read {
                path: display.clone(),
                source,
            })?,
        (format, bits) => {
            return Err(WavError::UnsupportedFormat {
                path: display,
                bits,
                kind: match format {
                    hound::SampleFormat::Int => "integer",
                    hound::SampleFormat::Float => "float",
                },
            })
        }
    };
    let channels = expect_channels as usize;
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for (i, &v) in interleaved.iter().enumerate() {
        out[i % channels].push(v);
    }
    Ok(out)
}

/// Reads a two-channel 16 kHz file as `(left, right)`.
pub fn read_stereo(path: &Path) -> Result<(Waveform, Waveform), WavError> {
    let mut channels = read_samples(path, 2)?;
    let right = Waveform::new(channels.pop().expect("two channels"))?;
    let left = Waveform::new(channels.pop().expect("two channels"))?;
    Ok((left, right))
}

/// Reads a mono 16 kHz file.
pub fn read_mono(path: &Path) -> Result<Waveform, WavError> {
    let mut channels = read_samples(path, 1)?;
    Ok(Waveform::new(channels.pop().expect("one channel"))?)
}

/// Writes a stereo 32-bit float file at 16 kHz.
pub fn write_stereo(path: &Path, left: &Waveform, right: &Waveform) -> Result<(), WavError> {
    let display = path.display().to_string();
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: SAMPLE_RATE_HZ as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|source| WavError::Write {
        path: display.clone(),
        source,
    })?;
    for (l, r) in left.samples().iter().zip(right.samples()) {
        writer
            .write_sample(*l as f32)
            .and_then(|_| writer.write_sample(*r as f32))
            .map_err(|source| WavError::Write {
                path: display.clone(),
                source,
            })?;
    }
    writer.finalize().map_err(|source| WavError::Write {
        path: display,
        source,
    })?;
    Ok(())
}

/// Writes a mono 32-bit float file at 16 kHz.
pub fn write_mono(path: &Path, wave: &Waveform) -> Result<(), WavError> {
    let display = path.display().to_string();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|source| WavError::Write {
        path: display.clone(),
        source,
    })?;
    for &s in wave.samples() {
        writer
            .write_sample(s as f32)
            .map_err(|source| WavError::Write {
                path: display.clone(),
                source,
            })?;
    }
    writer.finalize().map_err(|source| WavError::Write {
        path: display,
        source,
    })?;
    Ok(())
}
