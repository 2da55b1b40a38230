//! Resolution-agnostic 1D image tokenization and resolution-conditioned
//! autoregressive generation.
//!
//! This crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: a small tape-based reverse-mode autodiff engine, the tokenizer
//! and generator models built on it, their training loops, an analytic FLOPs
//! model, and the byte-level encodings of the token-stream and checkpoint
//! containers. File IO and the command line live in the `resotok` crate.
#![no_std]
// Tape ops are fallible, so they cannot be the std operator traits; `!(x >= 0.0)`
// deliberately rejects NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod checks;
pub mod config;
pub mod embedding;
pub mod error;
pub mod flops;
pub mod generator;
pub mod imaging;
pub mod init;
pub mod numerics;
pub mod quantizer;
pub mod sampling;
pub mod tokenizer;
pub mod tokens;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use numerics::{Module, Param, Scalar, Tape, Var};

/// The RNG used everywhere a seed must give bit-identical results.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a `u64` seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
