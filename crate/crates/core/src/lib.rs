//! Multi-instrument music transcription and transcription-conditioned source
//! separation: instrument recognition, conditioned onsets-and-frames
//! transcription, roll-conditioned spectrogram masking, the evaluation suite
//! and a synthetic corpus generator.

pub mod cli;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod recognizer;
pub mod separator;
pub mod symbolic;
pub mod synthdata;
pub mod taxonomy;
pub mod trainer;
pub mod transcriber;

pub use error::{Error, Result};
