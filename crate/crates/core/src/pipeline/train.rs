//! Minibatch training with early stopping on validation loss.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::derive_seed;
use crate::dsp::GammatoneBank;
use crate::geometry::{PredictionGrid, TargetGrid};
use crate::loss_metrics::{scalar_total_loss, total_loss, LossValues, LossWeights};
use crate::model::{AuralNet, AuralNetConfig, FeatureInput};
use crate::nn::{load_checkpoint, save_checkpoint, AdamConfig, AdamState, Tape};

use super::featurize::load_features;
use super::manifest::{DatasetManifest, Split};
use super::PipelineError;

pub const TRAIN_CONFIG_VERSION: u32 = 1;

/// Training recipe. The desk-scale default batch size is 32; the full
/// protocol uses 200.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub model: AuralNetConfig,
}

fn default_version() -> u32 {
    TRAIN_CONFIG_VERSION
}

fn default_lr() -> f64 {
    0.001
}

fn default_batch_size() -> usize {
    32
}

fn default_max_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let config: TrainConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != TRAIN_CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "train config version {} unsupported (expected {TRAIN_CONFIG_VERSION})",
                self.version
            )));
        }
        if !(self.lr > 0.0) {
            return Err(PipelineError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(PipelineError::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        let w = &self.loss_weights;
        if w.coarse < 0.0 || w.detection < 0.0 || w.azimuth < 0.0 || w.elevation < 0.0 {
            return Err(PipelineError::Config(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Written next to the checkpoint so evaluation can rebuild the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedSidecar {
    pub version: u32,
    pub model: AuralNetConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossValues,
    pub val: LossValues,
}

pub struct TrainOutcome {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val: LossValues,
    pub history: Vec<EpochLog>,
    pub checkpoint_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub log_path: PathBuf,
    /// Parameters as of the final epoch (the checkpoint on disk holds the
    /// best-validation parameters instead).
    pub final_model: AuralNet<f32>,
}

struct LoadedSplit {
    inputs: Vec<FeatureInput<f32>>,
    targets: Vec<TargetGrid>,
}

fn load_split(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    split: Split,
    bank: &GammatoneBank,
) -> Result<LoadedSplit, PipelineError> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for record in manifest.split(split) {
        let features = load_features(manifest, cache_dir, record, bank)?;
        inputs.push(FeatureInput::from_features(&features));
        targets.push(record.target.clone());
    }
    Ok(LoadedSplit { inputs, targets })
}

fn predict_all(
    net: &AuralNet<f32>,
    inputs: &[FeatureInput<f32>],
) -> Result<Vec<PredictionGrid>, PipelineError> {
    inputs
        .iter()
        .map(|inp| net.predict(inp).map_err(PipelineError::from))
        .collect()
}

/// Trains a model on the manifest's train split, early-stopping on the
/// validation split, and writes the best checkpoint plus sidecar config
/// and a per-epoch loss log.
pub fn run_train(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let bank = GammatoneBank::default_64();
    let train = load_split(manifest, cache_dir, Split::Train, &bank)?;
    let val = load_split(manifest, cache_dir, Split::Val, &bank)?;
    if train.inputs.is_empty() {
        return Err(PipelineError::EmptySplit { split: "train" });
    }
    if val.inputs.is_empty() {
        return Err(PipelineError::EmptySplit { split: "val" });
    }

    let mut net = AuralNet::<f32>::new(config.model.clone(), config.seed)?;
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(net.store());
    let variant = config.model.variant;

    let checkpoint_path = out_dir.join("checkpoint.anck");
    let sidecar_path = out_dir.join("model_config.json");
    let log_path = out_dir.join("training_log.csv");

    let mut history: Vec<EpochLog> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = LossValues {
        total: f64::INFINITY,
        coarse: 0.0,
        detection: 0.0,
        azimuth: 0.0,
        elevation: 0.0,
    };

    let mut epochs_run = 0usize;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train.inputs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1000 + epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_train = LossValues {
            total: 0.0,
            coarse: 0.0,
            detection: 0.0,
            azimuth: 0.0,
            elevation: 0.0,
        };
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let mut outs = Vec::with_capacity(chunk.len());
            let mut batch_targets = Vec::with_capacity(chunk.len());
            for &k in chunk {
                outs.push(net.forward(&mut tape, &train.inputs[k])?);
                batch_targets.push(train.targets[k].clone());
            }
            let loss = total_loss(&mut tape, &outs, &batch_targets, &config.loss_weights, variant)?;
            let values = loss.values(&tape);
            if !values.total.is_finite() {
                return Err(PipelineError::Diverged {
                    epoch,
                    loss: values.total,
                });
            }
            tape.backward(loss.total)?;
            adam.step(net.store_mut(), &tape, &adam_config);

            let w = chunk.len() as f64;
            epoch_train.total += values.total * w;
            epoch_train.coarse += values.coarse * w;
            epoch_train.detection += values.detection * w;
            epoch_train.azimuth += values.azimuth * w;
            epoch_train.elevation += values.elevation * w;
            seen += chunk.len();
        }
        let inv = 1.0 / seen as f64;
        epoch_train.total *= inv;
        epoch_train.coarse *= inv;
        epoch_train.detection *= inv;
        epoch_train.azimuth *= inv;
        epoch_train.elevation *= inv;

        // validation loss over the whole split, masked terms normalized
        // across the full set
        let val_preds = predict_all(&net, &val.inputs)?;
        let epoch_val = scalar_total_loss(&val_preds, &val.targets, &config.loss_weights, variant);
        if !epoch_val.total.is_finite() {
            return Err(PipelineError::Diverged {
                epoch,
                loss: epoch_val.total,
            });
        }

        history.push(EpochLog {
            epoch,
            train: epoch_train,
            val: epoch_val,
        });

        if epoch_val.total < best_val.total {
            best_val = epoch_val;
            best_epoch = epoch;
            save_checkpoint(net.store(), &checkpoint_path)?;
        }
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let sidecar = TrainedSidecar {
        version: TRAIN_CONFIG_VERSION,
        model: config.model.clone(),
        loss_weights: config.loss_weights,
        seed: config.seed,
        best_epoch,
        epochs_run,
    };
    let sidecar_json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| PipelineError::json(&sidecar_path, e))?;
    std::fs::write(&sidecar_path, sidecar_json).map_err(|e| PipelineError::io(&sidecar_path, e))?;

    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| PipelineError::io(&log_path, e))?,
    );
    writeln!(
        log,
        "epoch,train_total,train_coarse,train_det,train_azi,train_ele,\
         val_total,val_coarse,val_det,val_azi,val_ele"
    )
    .map_err(|e| PipelineError::io(&log_path, e))?;
    for entry in &history {
        writeln!(
            log,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            entry.epoch,
            entry.train.total,
            entry.train.coarse,
            entry.train.detection,
            entry.train.azimuth,
            entry.train.elevation,
            entry.val.total,
            entry.val.coarse,
            entry.val.detection,
            entry.val.azimuth,
            entry.val.elevation,
        )
        .map_err(|e| PipelineError::io(&log_path, e))?;
    }
    log.flush().map_err(|e| PipelineError::io(&log_path, e))?;

    Ok(TrainOutcome {
        best_epoch,
        epochs_run,
        best_val,
        history,
        checkpoint_path,
        sidecar_path,
        log_path,
        final_model: net,
    })
}

/// Rebuilds a trained model from a checkpoint directory.
pub fn load_trained_model(dir: &Path) -> Result<(AuralNet<f32>, TrainedSidecar), PipelineError> {
    let sidecar_path = dir.join("model_config.json");
    let text =
        std::fs::read_to_string(&sidecar_path).map_err(|e| PipelineError::io(&sidecar_path, e))?;
    let sidecar: TrainedSidecar =
        serde_json::from_str(&text).map_err(|e| PipelineError::json(&sidecar_path, e))?;
    let mut net = AuralNet::<f32>::new(sidecar.model.clone(), sidecar.seed)?;
    let checkpoint_path = dir.join("checkpoint.anck");
    load_checkpoint(net.store_mut(), &checkpoint_path).map_err(|e| match e {
        crate::nn::CheckpointError::ShapeMismatch { name, found, expected } => {
            PipelineError::CheckpointMismatch(format!(
                "parameter {name}: checkpoint shape {found:?} vs config shape {expected:?}"
            ))
        }
        other => PipelineError::Checkpoint(other),
    })?;
    Ok((net, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SectorGrid;
    use crate::model::Variant;
    use crate::pipeline::manifest::read_manifest;
    use crate::pipeline::synth::{run_synth, SynthConfig};

    fn tiny_train_config(seed: u64) -> TrainConfig {
        let grid = SectorGrid::default_8x3();
        let mut model = AuralNetConfig::desk_default(grid, Variant::Full);
        // shrink for test speed
        model.aggregation_hidden = vec![32];
        model.feature_dim = 24;
        model.branch_dim = 12;
        model.head_hidden = vec![12];
        TrainConfig {
            version: 1,
            seed,
            lr: 0.001,
            batch_size: 8,
            max_epochs: 3,
            patience: 2,
            loss_weights: LossWeights::default(),
            model,
        }
    }

    fn tiny_dataset(dir: &Path, seed: u64) -> DatasetManifest {
        let config = SynthConfig {
            version: 1,
            seed,
            grid: SectorGrid::default_8x3(),
            talker_counts: vec![1],
            snrs_db: vec![20.0],
            train_per_condition: 6,
            val_per_condition: 2,
            test_per_condition: 2,
            rooms: vec![],
            unseen_rooms: vec![],
            min_separation_deg: 45.0,
            allow_small_separation: false,
        };
        let summary = run_synth(&config, dir).unwrap();
        read_manifest(Path::new(&summary.manifest_path)).unwrap()
    }

    #[test]
    fn train_writes_artifacts_and_is_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 31);
        let cache = dir.path().join("features");
        crate::pipeline::featurize::run_featurize(&manifest, &cache).unwrap();

        let config = tiny_train_config(5);
        let out_a = dir.path().join("run_a");
        let out_b = dir.path().join("run_b");
        let a = run_train(&manifest, &cache, &config, &out_a).unwrap();
        let b = run_train(&manifest, &cache, &config, &out_b).unwrap();
        assert_eq!(a.epochs_run, b.epochs_run);
        assert_eq!(
            std::fs::read(&a.checkpoint_path).unwrap(),
            std::fs::read(&b.checkpoint_path).unwrap(),
            "same seed must give identical checkpoints"
        );
        assert_eq!(
            std::fs::read(&a.log_path).unwrap(),
            std::fs::read(&b.log_path).unwrap()
        );
        assert!(a.sidecar_path.is_file());
        // three epochs logged
        let log = std::fs::read_to_string(&a.log_path).unwrap();
        assert_eq!(log.lines().count(), 1 + a.epochs_run);
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        // patience 2 with max 3 epochs: if epoch 1 is best, stop at 3
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 33);
        let cache = dir.path().join("features");
        let config = tiny_train_config(6);
        let outcome = run_train(&manifest, &cache, &config, &dir.path().join("run")).unwrap();
        assert!(outcome.best_epoch >= 1);
        assert!(outcome.epochs_run <= config.max_epochs);
        assert!(outcome.epochs_run - outcome.best_epoch <= config.patience);
        let best_logged = outcome
            .history
            .iter()
            .map(|h| h.val.total)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best_logged, outcome.best_val.total);
    }

    #[test]
    fn loaded_checkpoint_reproduces_best_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 35);
        let cache = dir.path().join("features");
        let config = tiny_train_config(7);
        let out = dir.path().join("run");
        run_train(&manifest, &cache, &config, &out).unwrap();
        let (net, sidecar) = load_trained_model(&out).unwrap();
        assert_eq!(sidecar.model, config.model);
        // model must produce valid predictions after reload
        let bank = GammatoneBank::default_64();
        let record = manifest.split(Split::Test).next().unwrap();
        let features = load_features(&manifest, &cache, record, &bank).unwrap();
        let pred = net.predict(&FeatureInput::from_features(&features)).unwrap();
        assert!(pred.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_val_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            version: 1,
            seed: 1,
            grid: SectorGrid::default_8x3(),
            talker_counts: vec![1],
            snrs_db: vec![20.0],
            train_per_condition: 2,
            val_per_condition: 0,
            test_per_condition: 0,
            rooms: vec![],
            unseen_rooms: vec![],
            min_separation_deg: 45.0,
            allow_small_separation: false,
        };
        let summary = run_synth(&config, dir.path()).unwrap();
        let manifest = read_manifest(Path::new(&summary.manifest_path)).unwrap();
        let cache = dir.path().join("features");
        let err = run_train(
            &manifest,
            &cache,
            &tiny_train_config(1),
            &dir.path().join("run"),
        )
        .err()
        .expect("empty val split must fail");
        assert!(matches!(err, PipelineError::EmptySplit { split: "val" }));
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut config = tiny_train_config(1);
        config.lr = 0.0;
        assert!(config.validate().is_err());
        let mut config = tiny_train_config(1);
        config.batch_size = 0;
        assert!(config.validate().is_err());
        let mut config = tiny_train_config(1);
        config.loss_weights.azimuth = -0.1;
        assert!(config.validate().is_err());
    }
}
