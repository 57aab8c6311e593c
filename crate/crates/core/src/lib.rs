//! Binaural 3D multi-source sound localization, end to end at desk scale:
//! acoustic scene synthesis, auditory feature extraction, a gated
//! coarse-to-fine attention network, its masked multi-task loss, and
//! sector-aware evaluation metrics.
//!
//! Modules follow the processing chain:
//!
//! - [`geometry`]: spherical sector partition and target encoding
//! - [`dsp`]: gammatone spectrograms and GCC-PHAT cross-correlation
//! - [`acoustics`]: HRIR rendering, image-method reverb, scene mixing
//! - [`nn`]: tape-based reverse-mode autodiff and layer composites
//! - [`model`]: the gated coarse-to-fine localization network
//! - [`loss_metrics`]: masked multi-task loss and evaluation metrics
//! - [`pipeline`]: dataset builds, training, evaluation, prediction

pub mod acoustics;
pub mod dsp;
pub mod geometry;
pub mod io;
pub mod loss_metrics;
pub mod model;
pub mod pipeline;
pub mod nn;
