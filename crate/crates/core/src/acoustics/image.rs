//! Image-method room impulse responses with Sabine-derived wall
//! reflectivity.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AcousticsError, Room};
use crate::dsp::{Waveform, SAMPLE_RATE_HZ};

/// Images with direct-path-relative amplitude below this are dropped.
const AMPLITUDE_CUTOFF_REL: f64 = 1e-7;

/// Uniform wall reflection coefficient that realizes the room's T60 under
/// Sabine's relation `T60 = 0.161 V / (alpha * S)`, clamped to
/// `[0, 0.999]`.
pub fn sabine_reflection_coeff(room: &Room) -> Result<f64, AcousticsError> {
    let [lx, ly, lz] = room.dims;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    if room.t60 <= 0.0 {
        // a free-field request: fully absorptive walls
        return Ok(0.0);
    }
    let absorption = 0.161 * volume / (room.t60 * surface);
    if absorption > 1.0 {
        return Err(AcousticsError::AbsorptionInfeasible {
            required: absorption,
        });
    }
    Ok((1.0 - absorption).sqrt().clamp(0.0, 0.999))
}

fn check_inside(room: &Room, pos: [f64; 3], what: &'static str) -> Result<(), AcousticsError> {
    for axis in 0..3 {
        if pos[axis] <= 0.0 || pos[axis] >= room.dims[axis] {
            return Err(AcousticsError::PositionOutOfRoom {
                what,
                position: pos,
                dims: room.dims,
            });
        }
    }
    Ok(())
}

/// Impulse response between a source and a receiver via the image method.
///
/// Every image up to `max_order` total reflections contributes amplitude
/// `beta^order / (4 pi d)` at the integer-sample delay `round(d fs / c)`.
/// The response is truncated at `1.2 * T60` (and always long enough to
/// hold the direct path).
pub fn image_method_rir(
    room: &Room,
    src_pos: [f64; 3],
    mic_pos: [f64; 3],
    max_order: u32,
) -> Result<Waveform, AcousticsError> {
    check_inside(room, src_pos, "source")?;
    check_inside(room, mic_pos, "microphone")?;
    let beta = sabine_reflection_coeff(room)?;
    let fs = SAMPLE_RATE_HZ as f64;
    let c = room.speed_of_sound;

    let direct_dist = dist(src_pos, mic_pos);
    let direct_delay = (direct_dist * fs / c).round() as usize;
    let len = ((1.2 * room.t60 * fs).round() as usize).max(direct_delay + 1);
    let direct_amp = 1.0 / (4.0 * std::f64::consts::PI * direct_dist);
    let cutoff = direct_amp * AMPLITUDE_CUTOFF_REL;

    let mut taps = vec![0.0; len];
    // lattice bound from the order limit: |2m - q| <= max_order
    let m_limit = ((max_order + 1) / 2) as i64;
    for mx in -m_limit..=m_limit {
        for my in -m_limit..=m_limit {
            for mz in -m_limit..=m_limit {
                for q in 0..2i64 {
                    let ox = order_along(mx, q);
                    if ox > max_order as i64 {
                        continue;
                    }
                    for j in 0..2i64 {
                        let oy = order_along(my, j);
                        if ox + oy > max_order as i64 {
                            continue;
                        }
                        for k in 0..2i64 {
                            let oz = order_along(mz, k);
                            let order = ox + oy + oz;
                            if order > max_order as i64 {
                                continue;
                            }
                            let img = [
                                mirror(src_pos[0], q, mx, room.dims[0]),
                                mirror(src_pos[1], j, my, room.dims[1]),
                                mirror(src_pos[2], k, mz, room.dims[2]),
                            ];
                            let d = dist(img, mic_pos);
                            let delay = (d * fs / c).round() as usize;
                            if delay >= len {
                                continue;
                            }
                            let amp = beta.powi(order as i32)
                                / (4.0 * std::f64::consts::PI * d);
                            if amp < cutoff {
                                continue;
                            }
                            taps[delay] += amp;
                        }
                    }
                }
            }
        }
    }
    Ok(Waveform::new(taps).expect("finite taps"))
}

fn order_along(m: i64, q: i64) -> i64 {
    (2 * m - q).abs()
}

fn mirror(s: f64, q: i64, m: i64, dim: f64) -> f64 {
    (1 - 2 * q) as f64 * s + 2.0 * m as f64 * dim
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Full linear convolution, `a.len() + b.len() - 1` samples.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    // direct form is faster for short kernels
    if a.len().min(b.len()) <= 128 {
        let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
        let mut out = vec![0.0; out_len];
        for (i, &s) in short.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (j, &l) in long.iter().enumerate() {
                out[i + j] += s * l;
            }
        }
        return out;
    }
    let fft_len = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(fft_len, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(fft_len, Complex64::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / fft_len as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}
