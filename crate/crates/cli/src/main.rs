//! Command-line front end for the binaural localization pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use auralnet_core::pipeline::{
    self, read_manifest, run_eval, run_featurize, run_predict, run_synth, run_train,
    verify_manifest, PipelineError, SynthConfig, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "auralnet",
    about = "Binaural 3D multi-source sound localization: synthesize datasets, \
             extract features, train, evaluate, and predict",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    /// Path to a dataset manifest (manifest.jsonl).
    #[arg(long)]
    manifest: PathBuf,
    /// Feature cache directory; defaults to `features/` next to the
    /// manifest.
    #[arg(long)]
    features: Option<PathBuf>,
}

impl ManifestArg {
    fn features_dir(&self) -> PathBuf {
        self.features.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .unwrap_or_else(|| std::path::Path::new("."))
                .join("features")
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset of binaural clips.
    Synth {
        /// Synthesis config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract and cache features for every clip in a manifest.
    Featurize {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Cache directory override (same as --features).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset's train/val splits.
    Train {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoint, sidecar config, and log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Directory holding checkpoint.anck + model_config.json.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for eval.csv and eval.txt.
        #[arg(long)]
        out: PathBuf,
        /// Detection threshold.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Detect and localize sources in a stereo 16 kHz WAV file.
    Predict {
        /// Input WAV (two channels, 16 kHz, at least one second).
        wav: PathBuf,
        /// Directory holding checkpoint.anck + model_config.json.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Detection threshold.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Check a manifest's internal consistency.
    Verify {
        #[command(flatten)]
        manifest: ManifestArg,
    },
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth { config, seed, out } => {
            let mut config = SynthConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let summary = run_synth(&config, &out)?;
            println!(
                "wrote {} clips (train {}, val {}, test {}) and {}",
                summary.clip_count,
                summary.train,
                summary.val,
                summary.test,
                summary.manifest_path
            );
            Ok(())
        }
        Command::Featurize { manifest, out } => {
            let cache = out.unwrap_or_else(|| manifest.features_dir());
            let m = read_manifest(&manifest.manifest)?;
            let summary = run_featurize(&m, &cache)?;
            println!(
                "features: {} written, {} cached, {} failed",
                summary.written,
                summary.cached,
                summary.failures.len()
            );
            for (clip, error) in &summary.failures {
                eprintln!("  {clip}: {error}");
            }
            if summary.failures.is_empty() {
                Ok(())
            } else {
                Err(PipelineError::Manifest(format!(
                    "{} clip(s) failed to featurize",
                    summary.failures.len()
                )))
            }
        }
        Command::Train {
            manifest,
            config,
            seed,
            out,
        } => {
            let m = read_manifest(&manifest.manifest)?;
            let mut config = TrainConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let outcome = run_train(&m, &manifest.features_dir(), &config, &out)?;
            println!(
                "trained {} epochs; best validation loss {:.6} at epoch {}",
                outcome.epochs_run, outcome.best_val.total, outcome.best_epoch
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("log: {}", outcome.log_path.display());
            Ok(())
        }
        Command::Eval {
            manifest,
            checkpoint,
            out,
            threshold,
        } => {
            let m = read_manifest(&manifest.manifest)?;
            let report = run_eval(&m, &manifest.features_dir(), &checkpoint, &out, threshold)?;
            print!("{}", pipeline::format_text(&report));
            println!(
                "written: {}/eval.csv, {}/eval.txt",
                out.display(),
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            wav,
            checkpoint,
            threshold,
            json,
        } => {
            let detections = run_predict(&wav, &checkpoint, threshold)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&detections).expect("detections serialize")
                );
            } else if detections.is_empty() {
                println!("no sources detected at threshold {threshold}");
            } else {
                println!("sector  azimuth  elevation  probability");
                for d in &detections {
                    println!(
                        "({}, {})  {:7.2}  {:9.2}  {:.3}",
                        d.coarse, d.fine, d.azimuth_deg, d.elevation_deg, d.probability
                    );
                }
            }
            Ok(())
        }
        Command::Verify { manifest } => {
            let m = read_manifest(&manifest.manifest)?;
            let problems = verify_manifest(&m);
            if problems.is_empty() {
                println!("manifest ok: {} records", m.records.len());
                Ok(())
            } else {
                for p in &problems {
                    eprintln!("{p}");
                }
                Err(PipelineError::Manifest(format!(
                    "{} problem(s) found",
                    problems.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    pipeline::init_thread_pool();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
