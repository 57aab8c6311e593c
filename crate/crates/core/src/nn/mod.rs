//! Minimal dense-tensor compute layer with reverse-mode differentiation.
//!
//! Computations are recorded on a [`Tape`]: each operation eagerly
//! evaluates its result and appends a node, and [`Tape::backward`]
//! propagates gradients in reverse insertion order. Trainable parameters
//! live in a [`ParamStore`] and are leased onto a tape per forward pass;
//! after backward their gradients are read back for the optimizer.
//!
//! Everything is generic over the scalar type: training runs in `f32`,
//! gradient checks in `f64`.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use layers::{
    global_average_pool, mlp, multi_head_self_attention, sinusoidal_positional_encoding,
    AttentionParams, HeadActivation, MlpParams,
};
pub use params::{AdamConfig, AdamState, ParamId, ParamStore};
pub use tape::{Tape, VarId};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: left {left:?} vs right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("dimension {dim} not divisible by head count {heads}")]
    HeadsMismatch { dim: usize, heads: usize },
    #[error("parameter {0:?} not found")]
    UnknownParam(String),
}

/// Floating-point scalar usable for tape arithmetic.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
