//! Head-related impulse responses: a synthetic spherical-head model for
//! self-contained operation, plus load/save of measured sets.
//!
//! Coordinates: x forward, y left, z up; azimuth counterclockwise from
//! the front (90 degrees = left), elevation upward from the horizontal.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};
use crate::geometry::Doa;

use super::AcousticsError;

/// Head radius in meters, half the 0.14 m inter-microphone distance.
pub const HEAD_RADIUS_M: f64 = 0.07;
/// Distance between the two ear microphones in meters.
pub const INTER_MIC_DISTANCE_M: f64 = 2.0 * HEAD_RADIUS_M;
const SPEED_OF_SOUND: f64 = 343.0;

/// Impulse response pair for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirPair {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Directional impulse responses on an integer-degree grid.
pub struct HrirStore {
    sample_rate: usize,
    map: HashMap<(i32, i32), HrirPair>,
}

impl HrirStore {
    pub fn new() -> Self {
        Self {
            sample_rate: SAMPLE_RATE_HZ,
            map: HashMap::new(),
        }
    }

    pub fn sample_rate(&self) -> usize {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, azimuth_deg: i32, elevation_deg: i32, pair: HrirPair) {
        assert_eq!(
            pair.left.len(),
            pair.right.len(),
            "left/right response lengths must match"
        );
        self.map
            .insert((azimuth_deg.rem_euclid(360), elevation_deg), pair);
    }

    /// Fetches the response pair for a direction, which must sit on the
    /// stored grid.
    pub fn get(&self, doa: &Doa) -> Result<&HrirPair, AcousticsError> {
        let key = (
            (doa.azimuth_deg().round() as i32).rem_euclid(360),
            doa.elevation_deg().round() as i32,
        );
        let grid_doa = Doa::new(key.0 as f64, key.1 as f64);
        let on_grid = grid_doa
            .map(|g| {
                (g.azimuth_deg() - doa.azimuth_deg()).abs() < 1e-9
                    && (g.elevation_deg() - doa.elevation_deg()).abs() < 1e-9
            })
            .unwrap_or(false);
        if !on_grid {
            return Err(AcousticsError::MissingHrir {
                azimuth_deg: doa.azimuth_deg(),
                elevation_deg: doa.elevation_deg(),
            });
        }
        self.map.get(&key).ok_or(AcousticsError::MissingHrir {
            azimuth_deg: doa.azimuth_deg(),
            elevation_deg: doa.elevation_deg(),
        })
    }

    pub fn directions(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.map.keys().copied()
    }
}

impl Default for HrirStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Synthetic head: Woodworth interaural time difference from a spherical
/// head plus broadband per-ear level shading. The ear axes are tilted
/// slightly back and down, which makes the shading weakly direction-
/// dependent beyond pure left/right lateralization.
#[derive(Debug, Clone)]
pub struct SyntheticHead {
    /// Taps per impulse response.
    pub length: usize,
    /// Group-delay center of the fractional-delay kernels, in samples.
    pub base_delay: f64,
    /// Half the maximum interaural level difference, in dB.
    pub ild_half_db: f64,
}

impl Default for SyntheticHead {
    fn default() -> Self {
        Self {
            length: 64,
            base_delay: 24.0,
            ild_half_db: 3.0,
        }
    }
}

fn unit_vector(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Hann-windowed sinc kernel realizing a fractional delay of `tau`
/// samples with gain `gain`.
fn fractional_delay_kernel(len: usize, tau: f64, gain: f64) -> Vec<f64> {
    let half_width = 20.0;
    (0..len)
        .map(|n| {
            let t = n as f64 - tau;
            if t.abs() > half_width {
                return 0.0;
            }
            let sinc = if t.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
            };
            let window = 0.5 * (1.0 + (std::f64::consts::PI * t / half_width).cos());
            gain * sinc * window
        })
        .collect()
}

impl SyntheticHead {
    /// Response pair for one direction.
    pub fn render(&self, azimuth_deg: f64, elevation_deg: f64) -> HrirPair {
        let u = unit_vector(azimuth_deg, elevation_deg);
        // lateral angle: positive toward the left ear
        let lateral = u[1].clamp(-1.0, 1.0).asin();
        let itd = HEAD_RADIUS_M / SPEED_OF_SOUND * (lateral + lateral.sin());
        let itd_samples = itd * SAMPLE_RATE_HZ as f64;

        // ear axes tilted 10 degrees back and 10 degrees down
        let left_axis = unit_vector(100.0, -10.0);
        let right_axis = unit_vector(260.0, -10.0);
        let gain_left = 10f64.powf(self.ild_half_db * dot(u, left_axis) / 20.0);
        let gain_right = 10f64.powf(self.ild_half_db * dot(u, right_axis) / 20.0);

        HrirPair {
            left: fractional_delay_kernel(
                self.length,
                self.base_delay - itd_samples / 2.0,
                gain_left,
            ),
            right: fractional_delay_kernel(
                self.length,
                self.base_delay + itd_samples / 2.0,
                gain_right,
            ),
        }
    }

    /// Builds the full 5-degree store covering azimuth 0..355 and
    /// elevation -75..=75.
    pub fn build_store(&self) -> HrirStore {
        let mut store = HrirStore::new();
        for az in (0..360).step_by(5) {
            for el in (-75..=75).step_by(5) {
                store.insert(az, el, self.render(az as f64, el as f64));
            }
        }
        store
    }
}

/// Writes a store as a text manifest plus one mono WAV per ear per
/// direction. Manifest lines: `azimuth elevation left-file right-file`.
pub fn save_hrir_store(store: &HrirStore, dir: &Path) -> Result<(), AcousticsError> {
    std::fs::create_dir_all(dir).map_err(AcousticsError::Io)?;
    let mut dirs: Vec<(i32, i32)> = store.directions().collect();
    dirs.sort();
    let mut manifest = String::new();
    for (az, el) in dirs {
        let pair = store.map.get(&(az, el)).expect("listed direction");
        let left_name = format!("az{az:+04}_el{el:+03}_L.wav");
        let right_name = format!("az{az:+04}_el{el:+03}_R.wav");
        crate::io::wav::write_mono(
            &dir.join(&left_name),
            &Waveform::new(pair.left.clone()).expect("finite taps"),
        )?;
        crate::io::wav::write_mono(
            &dir.join(&right_name),
            &Waveform::new(pair.right.clone()).expect("finite taps"),
        )?;
        writeln!(manifest, "{az} {el} {left_name} {right_name}").expect("string write");
    }
    std::fs::write(dir.join("hrir_manifest.txt"), manifest).map_err(AcousticsError::Io)?;
    Ok(())
}

/// Loads a store written by [`save_hrir_store`] (or an externally
/// prepared set in the same layout).
pub fn load_hrir_store(manifest_path: &Path) -> Result<HrirStore, AcousticsError> {
    let text = std::fs::read_to_string(manifest_path).map_err(AcousticsError::Io)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut store = HrirStore::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(AcousticsError::BadHrirManifest {
                line: lineno + 1,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let az: i32 = fields[0]
            .parse()
            .map_err(|_| AcousticsError::BadHrirManifest {
                line: lineno + 1,
                reason: format!("bad azimuth {:?}", fields[0]),
            })?;
        let el: i32 = fields[1]
            .parse()
            .map_err(|_| AcousticsError::BadHrirManifest {
                line: lineno + 1,
                reason: format!("bad elevation {:?}", fields[1]),
            })?;
        let left = crate::io::wav::read_mono(&base.join(fields[2]))?;
        let right = crate::io::wav::read_mono(&base.join(fields[3]))?;
        if left.len() != right.len() {
            return Err(AcousticsError::BadHrirManifest {
                line: lineno + 1,
                reason: format!(
                    "left/right lengths differ: {} vs {}",
                    left.len(),
                    right.len()
                ),
            });
        }
        store.insert(
            az,
            el,
            HrirPair {
                left: left.samples().to_vec(),
                right: right.samples().to_vec(),
            },
        );
    }
    Ok(store)
}
