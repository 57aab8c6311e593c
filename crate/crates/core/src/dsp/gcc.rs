//! Generalized cross-correlation with phase transform.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{CcVector, DspError, Waveform, CC_MAX_LAG_SAMPLES};

/// Floor applied to the cross-spectrum magnitude before whitening.
const PHAT_MAGNITUDE_FLOOR: f64 = 1e-12;

/// Phase-transform cross-correlation sampled at integer lags -16..=16
/// over the whole clip.
///
/// Sign convention: a positive lag means the left channel leads (the
/// signal arrives at the left ear first), i.e. `right` is a delayed copy
/// of `left`. The correlation is `sum_n left[n] * right[n + lag]` after
/// PHAT whitening.
pub fn gcc_phat(left: &Waveform, right: &Waveform) -> Result<CcVector, DspError> {
    if left.len() != right.len() {
        return Err(DspError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    let n = left.len();
    let fft_len = (2 * n).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    let mut l: Vec<Complex64> = left
        .samples()
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    l.resize(fft_len, Complex64::new(0.0, 0.0));
    let mut r: Vec<Complex64> = right
        .samples()
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    r.resize(fft_len, Complex64::new(0.0, 0.0));
    fft.process(&mut l);
    fft.process(&mut r);

    // conj(L) * R so that the inverse transform at +lag correlates
    // left[n] with right[n + lag]
    let mut cross: Vec<Complex64> = l
        .iter()
        .zip(&r)
        .map(|(&lf, &rf)| {
            let c = lf.conj() * rf;
            c / c.norm().max(PHAT_MAGNITUDE_FLOOR)
        })
        .collect();
    ifft.process(&mut cross);

    let scale = 1.0 / fft_len as f64;
    let max_lag = CC_MAX_LAG_SAMPLES as isize;
    let mut coefficients = [0.0; 2 * CC_MAX_LAG_SAMPLES + 1];
    for (slot, lag) in (-max_lag..=max_lag).enumerate() {
        let idx = lag.rem_euclid(fft_len as isize) as usize;
        coefficients[slot] = cross[idx].re * scale;
    }
    Ok(CcVector::new(coefficients))
}
