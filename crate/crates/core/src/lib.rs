//! Single-frame video-text learning with multi-frame ensemble inference.
//!
//! The model pairs an image-level vision encoder with a text encoder and a
//! cross-attention multi-modal encoder. Training sees exactly one randomly
//! sampled frame per video; inference ensembles several uniformly sampled
//! frames, either by concatenating their encodings before the multi-modal
//! encoder (early fusion) or by aggregating per-frame scores (late fusion).
//! A temporal variant inserts a small transformer over per-frame encodings
//! with learned, interpolatable temporal position encodings.
//!
//! Everything runs on f64 with a fixed-order matmul, so a run is bit-exact
//! reproducible from its seed.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod plot;
pub mod qa;
pub mod rng;
pub mod temporal;
pub mod tokenizer;
pub mod training;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{EncodedSequence, FrameTensor, FusedOutput, Model};
pub use tokenizer::{TokenSequence, Vocab};
