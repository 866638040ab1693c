//! Noise-robust speech recognition pipeline: a Conv-TasNet enhancement front
//! end, a frozen learned feature extractor and a joint CTC/attention
//! Transformer recognizer, trained module by module and then fine-tuned end to
//! end on a synthetic noisy-speech corpus.

pub mod asr;
pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gradcheck;
pub mod nn;
pub mod pipeline;
pub mod params;
pub mod seed;
pub mod signal;
pub mod tensor;
pub mod training;

pub use error::{IrisError, Result};
