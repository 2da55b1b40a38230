//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. [`Var`] is a cheap
//! handle into it. [`Tape::backward`] walks the records in reverse and returns
//! a [`Gradients`] table; parameter gradients are folded into models with
//! [`Module::accumulate`]. A tape is meant to live for exactly one
//! forward/backward pair.

mod checkpoint;
mod gradcheck;
mod linalg;
mod nn;
mod ops;
mod param;
mod resample;
mod scalar;
mod shape;
mod shape_ops;
mod tape;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_module, module_entries, CheckpointEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_module, relative_error, GradCheckReport};
pub use linalg::matmul_values;
pub use param::{Module, Param, ParamId};
pub use resample::{resample_taps, resize_values, ResizeMode};
pub use scalar::Scalar;
pub use shape::numel;
pub use tape::{Gradients, Tape, Var};
