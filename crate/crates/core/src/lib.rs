//! Synthetic multi-timbre transcription toolkit.
//!
//! Randomized score generation and additive rendering, constant-Q analysis
//! with frame-energy normalization, Hebbian associative memory, the
//! multi-task loss toolbox, and timbre-separated transcription by
//! clustering per-bin embeddings.

pub mod cqt;
pub mod dataset;
pub mod datagen;
pub mod memory;
pub mod error;
pub mod eval;
pub mod losses;
pub mod rng;
pub mod separation;
pub mod synth;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use types::{CqtSpectrogram, EmbeddingField, GridConfig, NoteEvent, Pianoroll, Score};
