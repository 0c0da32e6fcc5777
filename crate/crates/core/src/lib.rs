//! Contrastive audio/spectrogram/text pretraining for underwater acoustic
//! target recognition, with prompt-based and fine-tuned classification.

pub mod autodiff;
pub mod contrastive;
pub mod data;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod inference;
pub mod text;

pub use error::{Error, Result};
