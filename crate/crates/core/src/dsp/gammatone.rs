//! Fourth-order gammatone filterbank on the ERB-rate scale.
//!
//! Each band is realized as a cascade of four second-order sections
//! sharing a complex-pole pair, with the closed-form gain that
//! normalizes the response to unity at the center frequency.

use num_complex::Complex64;
use std::f64::consts::PI;

const EAR_Q: f64 = 9.26449;
const MIN_BW: f64 = 24.7;

/// Equivalent rectangular bandwidth at `cf` Hz.
pub fn erb_hz(cf: f64) -> f64 {
    cf / EAR_Q + MIN_BW
}

/// `count` center frequencies between `lo_hz` and `hi_hz`, equally spaced
/// on the ERB-rate scale and returned in ascending order. The lowest band
/// sits exactly at `lo_hz`.
pub fn erb_space(lo_hz: f64, hi_hz: f64, count: usize) -> Vec<f64> {
    let c = EAR_Q * MIN_BW;
    let step = (-((hi_hz + c).ln()) + (lo_hz + c).ln()) / count as f64;
    let mut cfs: Vec<f64> = (1..=count)
        .map(|i| -c + (i as f64 * step).exp() * (hi_hz + c))
        .collect();
    cfs.reverse();
    cfs
}

/// Coefficients of one gammatone band: shared denominator, four
/// stage-specific first-order numerators, and the normalizing gain.
#[derive(Debug, Clone)]
struct BandCoeffs {
    a0: f64,
    a11: f64,
    a12: f64,
    a13: f64,
    a14: f64,
    b1: f64,
    b2: f64,
    gain: f64,
}

fn design_band(cf: f64, fs: f64) -> BandCoeffs {
    let t = 1.0 / fs;
    let b = 1.019 * 2.0 * PI * erb_hz(cf);
    let wt = 2.0 * cf * PI * t;
    let (sin_wt, cos_wt) = wt.sin_cos();
    let ebt = (b * t).exp();

    let sq_p = (3.0 + 2.0f64.powf(1.5)).sqrt();
    let sq_m = (3.0 - 2.0f64.powf(1.5)).sqrt();
    let a0 = t;
    let a11 = -(2.0 * t * cos_wt / ebt + 2.0 * sq_p * t * sin_wt / ebt) / 2.0;
    let a12 = -(2.0 * t * cos_wt / ebt - 2.0 * sq_p * t * sin_wt / ebt) / 2.0;
    let a13 = -(2.0 * t * cos_wt / ebt + 2.0 * sq_m * t * sin_wt / ebt) / 2.0;
    let a14 = -(2.0 * t * cos_wt / ebt - 2.0 * sq_m * t * sin_wt / ebt) / 2.0;
    let b1 = -2.0 * cos_wt / ebt;
    let b2 = (-2.0 * b * t).exp();

    // unity gain at cf, evaluated on the unit circle
    let z = Complex64::new(0.0, 2.0 * wt).exp();
    let e_shift = Complex64::new(0.0, wt).exp() * (2.0 * t / ebt);
    let common = Complex64::new(-2.0 * t, 0.0) * z;
    let f1 = common + e_shift * (cos_wt - sq_m * sin_wt);
    let f2 = common + e_shift * (cos_wt + sq_m * sin_wt);
    let f3 = common + e_shift * (cos_wt - sq_p * sin_wt);
    let f4 = common + e_shift * (cos_wt + sq_p * sin_wt);
    let denom = Complex64::new(-2.0 / (2.0 * b * t).exp(), 0.0) - 2.0 * z
        + (Complex64::new(1.0, 0.0) + z) * (2.0 / ebt);
    let gain = (f1 * f2 * f3 * f4 / denom.powi(4)).norm();

    BandCoeffs {
        a0,
        a11,
        a12,
        a13,
        a14,
        b1,
        b2,
        gain,
    }
}

fn biquad(b0: f64, b1n: f64, a1: f64, a2: f64, x: &[f64], out: &mut Vec<f64>) {
    // direct form II transposed with b2 = 0
    out.clear();
    out.reserve(x.len());
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &xn in x {
        let y = b0 * xn + s1;
        s1 = b1n * xn - a1 * y + s2;
        s2 = -a2 * y;
        out.push(y);
    }
}

/// The 64-band, 50 Hz to 8 kHz filterbank used by the feature front end.
#[derive(Debug, Clone)]
pub struct GammatoneBank {
    fs: f64,
    centers: Vec<f64>,
    coeffs: Vec<BandCoeffs>,
}

impl GammatoneBank {
    pub fn new(bands: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Self {
        let centers = erb_space(lo_hz, hi_hz, bands);
        let coeffs = centers.iter().map(|&cf| design_band(cf, fs)).collect();
        Self {
            fs,
            centers,
            coeffs,
        }
    }

    /// The default front-end configuration: 64 bands spanning 50-8000 Hz
    /// at 16 kHz.
    pub fn default_64() -> Self {
        Self::new(64, 50.0, 8000.0, crate::dsp::SAMPLE_RATE_HZ as f64)
    }

    pub fn band_count(&self) -> usize {
        self.centers.len()
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.centers[band]
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    /// Filters `signal` through one band.
    pub fn filter_band(&self, band: usize, signal: &[f64]) -> Vec<f64> {
        let c = &self.coeffs[band];
        let mut y1 = Vec::new();
        let mut y2 = Vec::new();
        biquad(c.a0 / c.gain, c.a11 / c.gain, c.b1, c.b2, signal, &mut y1);
        biquad(c.a0, c.a12, c.b1, c.b2, &y1, &mut y2);
        biquad(c.a0, c.a13, c.b1, c.b2, &y2, &mut y1);
        biquad(c.a0, c.a14, c.b1, c.b2, &y1, &mut y2);
        y2
    }

    /// Filters `signal` through every band; output `[band][sample]`.
    pub fn filter_all(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        (0..self.band_count())
            .map(|b| self.filter_band(b, signal))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erb_space_spans_requested_range() {
        let cfs = erb_space(50.0, 8000.0, 64);
        assert_eq!(cfs.len(), 64);
        assert!((cfs[0] - 50.0).abs() < 1e-6, "lowest cf {}", cfs[0]);
        assert!(cfs[63] < 8000.0);
        assert!(cfs[63] > 7000.0);
        assert!(cfs.windows(2).all(|w| w[0] < w[1]), "ascending order");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let bank = GammatoneBank::new(8, 50.0, 8000.0, 16000.0);
        let out = bank.filter_all(&vec![0.0; 256]);
        assert!(out.iter().all(|band| band.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn output_length_matches_input() {
        let bank = GammatoneBank::new(4, 100.0, 4000.0, 16000.0);
        let out = bank.filter_band(2, &vec![1.0; 777]);
        assert_eq!(out.len(), 777);
    }

    #[test]
    fn filterbank_is_linear() {
        let bank = GammatoneBank::new(6, 50.0, 8000.0, 16000.0);
        let n = 512;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 104729) % 89) as f64 / 44.0 - 1.0).collect();
        let a = 1.7;
        let b = -0.4;
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(&xv, &yv)| a * xv + b * yv).collect();
        for band in 0..bank.band_count() {
            let fm = bank.filter_band(band, &mixed);
            let fx = bank.filter_band(band, &x);
            let fy = bank.filter_band(band, &y);
            let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            for k in 0..n {
                let want = a * fx[k] + b * fy[k];
                assert!(
                    (fm[k] - want).abs() / scale < 1e-8,
                    "band {band} sample {k}: {} vs {}",
                    fm[k],
                    want
                );
            }
        }
    }

    #[test]
    fn unit_gain_at_center_frequency() {
        // steady-state response to a tone at cf should have amplitude ~1
        let bank = GammatoneBank::new(16, 50.0, 8000.0, 16000.0);
        for band in [2, 8, 13] {
            let cf = bank.center_hz(band);
            let n = 16000;
            let tone: Vec<f64> = (0..n)
                .map(|i| (2.0 * PI * cf * i as f64 / 16000.0).sin())
                .collect();
            let out = bank.filter_band(band, &tone);
            let tail = &out[n / 2..];
            let peak = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(
                (peak - 1.0).abs() < 0.05,
                "band {band} cf {cf:.1}: steady-state peak {peak}"
            );
        }
    }

    #[test]
    fn tone_excites_nearest_band_most() {
        let bank = GammatoneBank::default_64();
        let n = 16000;
        let tone: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let rms: Vec<f64> = (0..bank.band_count())
            .map(|b| {
                let out = bank.filter_band(b, &tone);
                let tail = &out[n / 2..];
                (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt()
            })
            .collect();
        let best = rms
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let nearest = (0..bank.band_count())
            .min_by(|&a, &b| {
                (bank.center_hz(a) - 1000.0)
                    .abs()
                    .partial_cmp(&(bank.center_hz(b) - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(
            best, nearest,
            "tone at 1 kHz peaked band {best} (cf {:.1}) instead of {nearest} (cf {:.1})",
            bank.center_hz(best),
            bank.center_hz(nearest)
        );
    }
}
