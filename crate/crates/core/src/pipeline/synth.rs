//! Dataset generation over the talker-count x SNR condition grid.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{
    derive_seed, sabine_reflection_coeff, synthesize_scene, Room, SceneSpec, SourceSpec,
    SyntheticBabble, SyntheticHead, SyntheticSpeech, MIN_AZIMUTH_SEPARATION_DEG,
};
use crate::geometry::{sector_of, SectorGrid};

use super::manifest::{
    DatasetManifest, ManifestHeader, ManifestRecord, Split, MANIFEST_SCHEMA, MANIFEST_VERSION,
};
use super::{validate_separation_floor, PipelineError};

pub const SYNTH_CONFIG_VERSION: u32 = 1;

/// Dataset generation recipe. Desk-scale counts by default; the full
/// protocol uses tens of thousands of clips per talker count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default = "SectorGrid::default_8x3")]
    pub grid: SectorGrid,
    #[serde(default = "default_talker_counts")]
    pub talker_counts: Vec<usize>,
    #[serde(default = "default_snrs")]
    pub snrs_db: Vec<f64>,
    pub train_per_condition: usize,
    pub val_per_condition: usize,
    pub test_per_condition: usize,
    /// Rooms available during training (the "seen" set). Empty list means
    /// anechoic synthesis.
    #[serde(default = "Room::standard_seen")]
    pub rooms: Vec<Room>,
    /// Rooms reserved for validation and the unseen half of the test
    /// split.
    #[serde(default = "Room::standard_unseen")]
    pub unseen_rooms: Vec<Room>,
    #[serde(default = "default_min_separation")]
    pub min_separation_deg: f64,
    #[serde(default)]
    pub allow_small_separation: bool,
}

fn default_version() -> u32 {
    SYNTH_CONFIG_VERSION
}

fn default_talker_counts() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_snrs() -> Vec<f64> {
    vec![20.0, 10.0, 0.0]
}

fn default_min_separation() -> f64 {
    MIN_AZIMUTH_SEPARATION_DEG
}

impl Room {
    /// First half of the standard room list: small and medium rooms seen
    /// during training.
    pub fn standard_seen() -> Vec<Room> {
        Room::standard_rooms().into_iter().step_by(2).collect()
    }

    /// Second half of the standard room list, held out from training.
    pub fn standard_unseen() -> Vec<Room> {
        Room::standard_rooms().into_iter().skip(1).step_by(2).collect()
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let config: SynthConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != SYNTH_CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "synth config version {} unsupported (expected {SYNTH_CONFIG_VERSION})",
                self.version
            )));
        }
        if self.talker_counts.is_empty()
            || self.talker_counts.iter().any(|&t| t == 0 || t > 3)
        {
            return Err(PipelineError::Config(format!(
                "talker_counts must be within 1..=3, got {:?}",
                self.talker_counts
            )));
        }
        if self.snrs_db.is_empty() {
            return Err(PipelineError::Config("snrs_db must not be empty".into()));
        }
        if self.train_per_condition + self.val_per_condition + self.test_per_condition == 0 {
            return Err(PipelineError::Config(
                "at least one of train/val/test_per_condition must be positive".into(),
            ));
        }
        validate_separation_floor(self.min_separation_deg, self.allow_small_separation)?;
        for room in self.rooms.iter().chain(&self.unseen_rooms) {
            sabine_reflection_coeff(room).map_err(|e| {
                PipelineError::Config(format!("room {:?}: {e}", room.dims))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub clip_count: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub manifest_path: String,
}

/// Draws a collision-free set of directions on the 5-degree dataset grid
/// honoring the azimuthal separation floor.
fn draw_sources(
    rng: &mut ChaCha8Rng,
    grid: &SectorGrid,
    talkers: usize,
    min_separation_deg: f64,
) -> Vec<SourceSpec> {
    let all = crate::geometry::dataset_doa_grid();
    'attempt: loop {
        let mut chosen: Vec<SourceSpec> = Vec::with_capacity(talkers);
        for _ in 0..talkers {
            let mut tries = 0;
            loop {
                let doa = all[rng.gen_range(0..all.len())];
                let separated = chosen
                    .iter()
                    .all(|s| s.doa.azimuth_separation_deg(&doa) >= min_separation_deg);
                let sector = sector_of(grid, &doa).expect("grid elevations in range");
                let free = chosen
                    .iter()
                    .all(|s| sector_of(grid, &s.doa).expect("in range") != sector);
                if separated && free {
                    chosen.push(SourceSpec {
                        signal_id: rng.gen(),
                        doa,
                    });
                    break;
                }
                tries += 1;
                if tries > 200 {
                    continue 'attempt;
                }
            }
        }
        return chosen;
    }
}

struct RecordPlan {
    index: usize,
    split: Split,
    talkers: usize,
    snr_db: f64,
    room: Option<(String, Room, bool)>,
    seed: u64,
}

/// Generates the dataset: WAV clips plus the manifest. Deterministic per
/// config seed regardless of thread count.
pub fn run_synth(config: &SynthConfig, out_dir: &Path) -> Result<SynthSummary, PipelineError> {
    config.validate()?;
    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| PipelineError::io(&clips_dir, e))?;

    // plan all records first so parallel synthesis stays deterministic
    let mut plans = Vec::new();
    let mut index = 0usize;
    let splits = [
        (Split::Train, config.train_per_condition),
        (Split::Val, config.val_per_condition),
        (Split::Test, config.test_per_condition),
    ];
    for &(split, count) in &splits {
        for &talkers in &config.talker_counts {
            for &snr_db in &config.snrs_db {
                for k in 0..count {
                    let seed = derive_seed(config.seed, index as u64);
                    let room = pick_room(config, split, k, seed);
                    plans.push(RecordPlan {
                        index,
                        split,
                        talkers,
                        snr_db,
                        room,
                        seed,
                    });
                    index += 1;
                }
            }
        }
    }

    let head = SyntheticHead::default();
    let hrirs = head.build_store();
    let speech = SyntheticSpeech::new(derive_seed(config.seed, 0x737065));
    let babble = SyntheticBabble::new(derive_seed(config.seed, 0x6e6f69), &hrirs);

    let records: Result<Vec<ManifestRecord>, PipelineError> = plans
        .par_iter()
        .map(|plan| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 0x647261));
            let sources =
                draw_sources(&mut rng, &config.grid, plan.talkers, config.min_separation_deg);
            let spec = SceneSpec {
                sources,
                snr_db: Some(plan.snr_db),
                room: plan.room.as_ref().map(|(_, r, _)| r.clone()),
                head_pos: None,
                seed: plan.seed,
                min_separation_deg: if config.min_separation_deg
                    == MIN_AZIMUTH_SEPARATION_DEG
                {
                    None
                } else {
                    Some(config.min_separation_deg)
                },
            };
            let (clip, target) =
                synthesize_scene(&spec, &config.grid, &hrirs, &speech, &babble)?;
            let clip_name = format!("clips/{}_{:06}.wav", plan.split, plan.index);
            crate::io::wav::write_stereo(&out_dir.join(&clip_name), &clip.left, &clip.right)?;
            Ok(ManifestRecord {
                clip: clip_name,
                split: plan.split,
                seen: plan.room.as_ref().map(|(_, _, seen)| *seen),
                room_id: plan.room.as_ref().map(|(id, _, _)| id.clone()),
                snr_db: Some(plan.snr_db),
                talkers: plan.talkers,
                spec: clip.provenance,
                target,
            })
        })
        .collect();
    let records = records?;

    let manifest = DatasetManifest {
        header: ManifestHeader {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            grid: config.grid,
            seed: config.seed,
            clip_count: records.len(),
        },
        records,
        base_dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    super::manifest::write_manifest(&manifest, &manifest_path)?;

    Ok(SynthSummary {
        clip_count: manifest.records.len(),
        train: manifest.split(Split::Train).count(),
        val: manifest.split(Split::Val).count(),
        test: manifest.split(Split::Test).count(),
        manifest_path: manifest_path.display().to_string(),
    })
}

/// Room assignment policy: training uses seen rooms, validation unseen
/// rooms, and the test split alternates seen/unseen for balanced counts.
fn pick_room(
    config: &SynthConfig,
    split: Split,
    k: usize,
    seed: u64,
) -> Option<(String, Room, bool)> {
    let pick = |rooms: &[Room], label: &str, seen: bool| -> Option<(String, Room, bool)> {
        if rooms.is_empty() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x726f6f));
        let idx = rng.gen_range(0..rooms.len());
        Some((format!("{label}-{idx}"), rooms[idx].clone(), seen))
    };
    match split {
        Split::Train => pick(&config.rooms, "seen", true),
        Split::Val => pick(&config.unseen_rooms, "unseen", false).or_else(|| {
            // fall back to seen rooms when no unseen set is configured
            pick(&config.rooms, "seen", true)
        }),
        Split::Test => {
            let use_seen = k % 2 == 0;
            if use_seen {
                pick(&config.rooms, "seen", true)
                    .or_else(|| pick(&config.unseen_rooms, "unseen", false))
            } else {
                pick(&config.unseen_rooms, "unseen", false)
                    .or_else(|| pick(&config.rooms, "seen", true))
            }
        }
    }
}
