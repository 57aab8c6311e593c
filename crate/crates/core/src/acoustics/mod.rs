//! Labeled binaural scene synthesis: HRIR rendering, image-method
//! reverberation, multi-talker composition, and SNR-calibrated noise.

mod hrir;
mod image;
mod providers;

pub use hrir::{
    load_hrir_store, save_hrir_store, HrirPair, HrirStore, SyntheticHead, HEAD_RADIUS_M,
    INTER_MIC_DISTANCE_M,
};
pub use image::{convolve, image_method_rir, sabine_reflection_coeff};
pub use providers::{
    derive_seed, NoiseProvider, SpeechProvider, SyntheticBabble, SyntheticSpeech,
};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{Waveform, CLIP_SAMPLES};
use crate::geometry::{encode_targets, Doa, GeometryError, SectorGrid, TargetGrid};

/// Default minimum azimuthal separation between concurrent talkers.
pub const MIN_AZIMUTH_SEPARATION_DEG: f64 = 45.0;
/// Fixed source-to-head distance in meters.
pub const SOURCE_DISTANCE_M: f64 = 1.0;
/// Minimum clearance between any source/head position and a wall.
pub const WALL_MARGIN_M: f64 = 0.5;
/// Reflection-order bound for room impulse responses.
pub const DEFAULT_MAX_ORDER: u32 = 20;

#[derive(Debug, Error)]
pub enum AcousticsError {
    #[error("room dimensions must be positive and T60 non-negative, got {dims:?}, {t60}")]
    BadRoom { dims: [f64; 3], t60: f64 },
    #[error("requested T60 needs absorption {required:.3} > 1; the room is too small")]
    AbsorptionInfeasible { required: f64 },
    #[error("{what} position {position:?} outside room {dims:?}")]
    PositionOutOfRoom {
        what: &'static str,
        position: [f64; 3],
        dims: [f64; 3],
    },
    #[error("sources at azimuths {a:.1} and {b:.1} are {separation:.1} deg apart, need >= {minimum:.1}")]
    SeparationViolation {
        a: f64,
        b: f64,
        separation: f64,
        minimum: f64,
    },
    #[error("no impulse response stored for ({azimuth_deg}, {elevation_deg}) deg")]
    MissingHrir {
        azimuth_deg: f64,
        elevation_deg: f64,
    },
    #[error("noise bed is silent; cannot scale it to a target SNR")]
    SilentNoise,
    #[error("scene needs 1 to 3 sources, got {0}")]
    BadSourceCount(usize),
    #[error("cannot place head and sources {margin} m from the walls of room {dims:?}")]
    PlacementInfeasible { dims: [f64; 3], margin: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Wav(#[from] crate::io::wav::WavError),
    #[error("hrir manifest line {line}: {reason}")]
    BadHrirManifest { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A shoebox room: dimensions in meters and target reverberation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: [f64; 3],
    pub t60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl Room {
    pub fn new(dims: [f64; 3], t60: f64) -> Result<Self, AcousticsError> {
        if dims.iter().any(|&d| !(d > 0.0)) || !(t60 >= 0.0) {
            return Err(AcousticsError::BadRoom { dims, t60 });
        }
        Ok(Self {
            dims,
            t60,
            speed_of_sound: default_speed_of_sound(),
        })
    }

    /// The six room configurations used for dataset synthesis.
    pub fn standard_rooms() -> Vec<Room> {
        [
            ([5.0, 5.0, 3.0], 0.3),
            ([6.0, 6.0, 4.0], 0.4),
            ([10.0, 8.0, 4.0], 0.5),
            ([12.0, 10.0, 5.0], 0.6),
            ([15.0, 10.0, 5.0], 0.7),
            ([13.0, 9.0, 5.0], 0.8),
        ]
        .into_iter()
        .map(|(dims, t60)| Room::new(dims, t60).expect("valid presets"))
        .collect()
    }
}

/// One source in a scene: which excerpt to play and from where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub signal_id: u64,
    pub doa: Doa,
}

/// Complete recipe for one labeled clip. Synthesis is a pure function of
/// this value plus the stores, so clips are reproducible by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    /// `None` renders a clean (noise-free) scene.
    pub snr_db: Option<f64>,
    pub room: Option<Room>,
    /// Filled in by synthesis when a room is present.
    #[serde(default)]
    pub head_pos: Option<[f64; 3]>,
    pub seed: u64,
    /// Overrides the default 45-degree talker separation floor.
    #[serde(default)]
    pub min_separation_deg: Option<f64>,
}

impl SceneSpec {
    pub fn min_separation(&self) -> f64 {
        self.min_separation_deg.unwrap_or(MIN_AZIMUTH_SEPARATION_DEG)
    }
}

/// A rendered two-channel clip with its ground truth and provenance.
#[derive(Debug, Clone)]
pub struct BinauralClip {
    pub left: Waveform,
    pub right: Waveform,
    pub truth: Vec<Doa>,
    pub provenance: SceneSpec,
}

/// Convolves a mono signal with a response pair; output clipped or padded
/// to the one-second clip length.
pub fn render_binaural(signal: &Waveform, hrir: &HrirPair) -> (Waveform, Waveform) {
    let mut left = convolve(signal.samples(), &hrir.left);
    let mut right = convolve(signal.samples(), &hrir.right);
    left.resize(CLIP_SAMPLES, 0.0);
    right.resize(CLIP_SAMPLES, 0.0);
    (
        Waveform::new(left).expect("finite convolution"),
        Waveform::new(right).expect("finite convolution"),
    )
}

/// Convolves both ear channels with the same room response, truncated to
/// the clip length.
pub fn apply_room(
    channels: (&Waveform, &Waveform),
    rir: &Waveform,
) -> (Waveform, Waveform) {
    let mut left = convolve(channels.0.samples(), rir.samples());
    let mut right = convolve(channels.1.samples(), rir.samples());
    left.resize(CLIP_SAMPLES, 0.0);
    right.resize(CLIP_SAMPLES, 0.0);
    (
        Waveform::new(left).expect("finite convolution"),
        Waveform::new(right).expect("finite convolution"),
    )
}

fn channel_pair_power(l: &Waveform, r: &Waveform) -> f64 {
    let p = |w: &Waveform| {
        w.samples().iter().map(|v| v * v).sum::<f64>() / w.len().max(1) as f64
    };
    0.5 * (p(l) + p(r))
}

/// Adds `noise` to `speech` scaled so the resulting mixture has exactly
/// the requested speech-to-noise ratio (powers averaged across the two
/// channels over the whole clip).
pub fn mix_at_snr(
    speech: (&Waveform, &Waveform),
    noise: (&Waveform, &Waveform),
    snr_db: f64,
) -> Result<(Waveform, Waveform), AcousticsError> {
    if speech.0.len() != noise.0.len() || speech.1.len() != noise.1.len() {
        return Err(AcousticsError::Dsp(crate::dsp::DspError::LengthMismatch {
            left: speech.0.len(),
            right: noise.0.len(),
        }));
    }
    let p_speech = channel_pair_power(speech.0, speech.1);
    let p_noise = channel_pair_power(noise.0, noise.1);
    if p_noise <= 0.0 {
        return Err(AcousticsError::SilentNoise);
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mix = |s: &Waveform, n: &Waveform| {
        Waveform::new(
            s.samples()
                .iter()
                .zip(n.samples())
                .map(|(&sv, &nv)| sv + gain * nv)
                .collect(),
        )
        .expect("finite mixture")
    };
    Ok((mix(speech.0, noise.0), mix(speech.1, noise.1)))
}

fn validate_separation(spec: &SceneSpec) -> Result<(), AcousticsError> {
    let minimum = spec.min_separation();
    for i in 0..spec.sources.len() {
        for j in i + 1..spec.sources.len() {
            let a = &spec.sources[i].doa;
            let b = &spec.sources[j].doa;
            let separation = a.azimuth_separation_deg(b);
            if separation < minimum {
                return Err(AcousticsError::SeparationViolation {
                    a: a.azimuth_deg(),
                    b: b.azimuth_deg(),
                    separation,
                    minimum,
                });
            }
        }
    }
    Ok(())
}

fn source_position(head: [f64; 3], doa: &Doa) -> [f64; 3] {
    let az = doa.azimuth_deg().to_radians();
    let el = doa.elevation_deg().to_radians();
    [
        head[0] + SOURCE_DISTANCE_M * el.cos() * az.cos(),
        head[1] + SOURCE_DISTANCE_M * el.cos() * az.sin(),
        head[2] + SOURCE_DISTANCE_M * el.sin(),
    ]
}

/// Chooses a head position keeping the head and every 1 m source shell
/// point at least [`WALL_MARGIN_M`] from the walls.
fn place_head(room: &Room, rng: &mut ChaCha8Rng) -> Result<[f64; 3], AcousticsError> {
    let margin = WALL_MARGIN_M + SOURCE_DISTANCE_M;
    let mut pos = [0.0; 3];
    for axis in 0..3 {
        let lo = margin;
        let hi = room.dims[axis] - margin;
        if hi < lo {
            return Err(AcousticsError::PlacementInfeasible {
                dims: room.dims,
                margin,
            });
        }
        pos[axis] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    }
    Ok(pos)
}

/// Renders a complete labeled clip from its recipe. Deterministic given
/// `(spec, stores)`.
pub fn synthesize_scene(
    spec: &SceneSpec,
    grid: &SectorGrid,
    hrirs: &HrirStore,
    speech: &dyn SpeechProvider,
    noise: &dyn NoiseProvider,
) -> Result<(BinauralClip, TargetGrid), AcousticsError> {
    if spec.sources.is_empty() || spec.sources.len() > 3 {
        return Err(AcousticsError::BadSourceCount(spec.sources.len()));
    }
    validate_separation(spec)?;
    let doas: Vec<Doa> = spec.sources.iter().map(|s| s.doa).collect();
    let targets = encode_targets(grid, &doas)?;
    for doa in &doas {
        hrirs.get(doa)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x706c6163));
    let mut resolved = spec.clone();
    let head = match &spec.room {
        Some(room) => {
            let head = match spec.head_pos {
                Some(p) => p,
                None => place_head(room, &mut rng)?,
            };
            resolved.head_pos = Some(head);
            Some(head)
        }
        None => None,
    };

    let mut left = vec![0.0; CLIP_SAMPLES];
    let mut right = vec![0.0; CLIP_SAMPLES];
    for source in &spec.sources {
        let dry = speech.clip(source.signal_id);
        let pair = hrirs.get(&source.doa)?;
        let (mut l, mut r) = render_binaural(&dry, pair);
        if let (Some(room), Some(head)) = (&spec.room, head) {
            let src_pos = source_position(head, &source.doa);
            let rir = image_method_rir(room, src_pos, head, DEFAULT_MAX_ORDER)?;
            let (wl, wr) = apply_room((&l, &r), &rir);
            l = wl;
            r = wr;
        }
        for n in 0..CLIP_SAMPLES {
            left[n] += l.samples()[n];
            right[n] += r.samples()[n];
        }
    }
    let mut left = Waveform::new(left)?;
    let mut right = Waveform::new(right)?;

    if let Some(snr_db) = spec.snr_db {
        if snr_db.is_finite() {
            let noise_id = derive_seed(spec.seed, 0x6e6f6973);
            let (nl, nr) = noise.clip(noise_id);
            let (ml, mr) = mix_at_snr((&left, &right), (&nl, &nr), snr_db)?;
            left = ml;
            right = mr;
        }
    }

    Ok((
        BinauralClip {
            left,
            right,
            truth: doas,
            provenance: resolved,
        },
        targets,
    ))
}
