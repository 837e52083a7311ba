//! Scoring of word-level emphasis transfer in speech-to-speech systems.
//!
//! The pipeline takes a source utterance with known emphasized words and the
//! system's output utterance, finds which output words carry emphasis, maps
//! the source emphasis onto the output through a word alignment, and reports
//! precision, recall and F1.
//!
//! - [`audio`]: WAV I/O and the 20 ms frame clock.
//! - [`features`]: pitch, voicing and loudness features per frame.
//! - [`classifier`]: frame-level emphasis classifier and word aggregation.
//! - [`segment`]: word spans from timestamps or silence gaps.
//! - [`align`]: word alignment (identity, 3-gram, IBM Model 1, external).
//! - [`pipeline`]: manifests, detectors and dataset reports.
//! - [`synth`]: synthetic utterances with exact ground truth.

pub mod align;
pub mod audio;
pub mod classifier;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
