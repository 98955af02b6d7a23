//! Multilingual unit-based speech-to-speech translation, end to end, on
//! procedurally generated tone languages.
//!
//! The pipeline: synthesize a parallel corpus of toy tone languages, extract
//! filterbank features, quantize them with per-family k-means into discrete
//! units, train a speech-to-unit translation model whose decoding is masked
//! to the target language's unit subset, and train per-family vocoders that
//! turn units back into audio. An exact spectral transcriber plays the role
//! of ASR so WER / BLEU evaluation is deterministic.

pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod numerics;
pub mod discretize;
pub mod s2mu;
pub mod synthlang;
pub mod util;
pub mod vocoder;
pub mod vocab;

pub use error::{Error, Result};
