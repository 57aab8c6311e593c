//! Pluggable signal sources: synthetic speech-like excerpts and diffuse
//! babble noise, both deterministic per id.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Waveform, CLIP_SAMPLES, SAMPLE_RATE_HZ};
use crate::geometry::Doa;

use super::hrir::HrirStore;
use super::image::convolve;

/// Splits a master seed into independent per-id streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Source of one-second mono excerpts addressed by id.
pub trait SpeechProvider: Sync {
    fn clip(&self, id: u64) -> Waveform;
}

/// Source of one-second binaural noise beds addressed by id.
pub trait NoiseProvider: Sync {
    fn clip(&self, id: u64) -> (Waveform, Waveform);
}

/// Target RMS of provider output.
const PROVIDER_RMS: f64 = 0.1;

fn normalize_rms(samples: &mut [f64], target: f64) {
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

/// Amplitude-modulated harmonic complexes with interspersed noise bursts,
/// a stand-in for voiced/unvoiced speech structure.
#[derive(Debug, Clone)]
pub struct SyntheticSpeech {
    seed: u64,
}

impl SyntheticSpeech {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl SpeechProvider for SyntheticSpeech {
    fn clip(&self, id: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, id));
        let fs = SAMPLE_RATE_HZ as f64;
        let f0 = rng.gen_range(100.0..250.0);
        let harmonics = ((7500.0 / f0) as usize).min(24);
        let phases: Vec<f64> = (0..harmonics)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let syllable_rate = rng.gen_range(2.5..7.0);
        let syllable_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        // slow pitch drift keeps the excerpt from being perfectly periodic
        let drift = rng.gen_range(-12.0..12.0);

        let mut samples = vec![0.0; CLIP_SAMPLES];
        for (n, s) in samples.iter_mut().enumerate() {
            let t = n as f64 / fs;
            let envelope =
                0.55 - 0.45 * (std::f64::consts::TAU * syllable_rate * t + syllable_phase).cos();
            let inst_f0 = f0 + drift * t;
            let mut voiced = 0.0;
            for (h, &ph) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                voiced +=
                    (std::f64::consts::TAU * inst_f0 * k * t + ph).sin() / k;
            }
            *s = envelope * voiced;
        }
        // unvoiced bursts
        let bursts = rng.gen_range(2..=5);
        for _ in 0..bursts {
            let len = rng.gen_range(400..1200);
            let start = rng.gen_range(0..CLIP_SAMPLES - len);
            let level = rng.gen_range(0.2..0.5);
            for k in 0..len {
                let ramp = (std::f64::consts::PI * k as f64 / len as f64).sin();
                samples[start + k] += level * ramp * rng.gen_range(-1.0..1.0);
            }
        }
        normalize_rms(&mut samples, PROVIDER_RMS);
        Waveform::new(samples).expect("finite synthesis")
    }
}

/// Diffuse babble: decorrelated pink-ish noise rendered from 36 azimuths
/// at zero elevation and summed at the ears.
pub struct SyntheticBabble<'a> {
    seed: u64,
    hrirs: &'a HrirStore,
}

impl<'a> SyntheticBabble<'a> {
    pub fn new(seed: u64, hrirs: &'a HrirStore) -> Self {
        Self { seed, hrirs }
    }
}

impl NoiseProvider for SyntheticBabble<'_> {
    fn clip(&self, id: u64) -> (Waveform, Waveform) {
        let mut left = vec![0.0; CLIP_SAMPLES];
        let mut right = vec![0.0; CLIP_SAMPLES];
        for step in 0..36u64 {
            let az = (step * 10) as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.seed,
                id.wrapping_mul(37).wrapping_add(step),
            ));
            // one-pole lowpass turns white noise into a speech-shaped hum
            let mut state = 0.0;
            let src: Vec<f64> = (0..CLIP_SAMPLES)
                .map(|_| {
                    state += 0.25 * (rng.gen_range(-1.0..1.0) - state);
                    state
                })
                .collect();
            let doa = Doa::new(az, 0.0).expect("grid direction");
            let pair = self
                .hrirs
                .get(&doa)
                .expect("36-azimuth ring must be on the store grid");
            let l = convolve(&src, &pair.left);
            let r = convolve(&src, &pair.right);
            for n in 0..CLIP_SAMPLES {
                left[n] += l[n];
                right[n] += r[n];
            }
        }
        let joint_rms = ((left.iter().map(|v| v * v).sum::<f64>()
            + right.iter().map(|v| v * v).sum::<f64>())
            / (2.0 * CLIP_SAMPLES as f64))
            .sqrt();
        if joint_rms > 0.0 {
            let g = PROVIDER_RMS / joint_rms;
            for s in left.iter_mut().chain(right.iter_mut()) {
                *s *= g;
            }
        }
        (
            Waveform::new(left).expect("finite synthesis"),
            Waveform::new(right).expect("finite synthesis"),
        )
    }
}
