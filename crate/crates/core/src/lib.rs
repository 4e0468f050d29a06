//! Streaming multi-intent spoken language understanding.
//!
//! A unidirectional LSTMP encoder with frame stacking and time reduction
//! produces a per-step log-probability lattice over intents plus a blank
//! symbol. It is trained with CTC (after character-level CTC pre-training
//! of the first layer and last-step cross-entropy pre-training of the rest)
//! and decoded greedily, one lattice row at a time, so intents are emitted
//! while audio is still arriving.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ctc;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod numerics;
pub mod training;

pub use error::{Result, SluError};
