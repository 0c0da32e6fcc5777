//! Audio, spectrogram and text encoders mapping into one shared embedding
//! space, plus the parameter checkpoint container.

mod audio;
pub mod checkpoint;
mod config;
mod layers;
mod spec;
mod text;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use audio::AudioEncoder;
pub use checkpoint::{Checkpoint, NamedArray};
pub use config::{AudioConfig, EncoderConfig, SpecConfig, TextConfig};
pub(crate) use layers::Linear;
pub use spec::{spec_features, SpecEncoder};
pub use text::TextEncoder;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::dsp::{AudioSegment, Spectrogram, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Spec,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub modality: Modality,
}

impl Embedding {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Split a `[B, d]` tape value into per-row embeddings.
pub fn embeddings_from(tape: &Tape, v: Var, modality: Modality) -> Vec<Embedding> {
    let d = *tape.shape(v).last().unwrap_or(&0);
    tape.value(v)
        .chunks(d.max(1))
        .map(|r| Embedding {
            vector: r.to_vec(),
            modality,
        })
        .collect()
}

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Audio clips of one batch: 16 kHz and equal length.
pub(crate) fn check_audio_batch(segments: &[&AudioSegment]) -> Result<()> {
    let Some(first) = segments.first() else {
        return Err(Error::Contract("audio batch is empty".into()));
    };
    for s in segments {
        if s.sample_rate_hz != SAMPLE_RATE {
            return Err(Error::Contract(format!(
                "segment {}#{} is at {} Hz; encoders take {SAMPLE_RATE} Hz audio",
                s.source_id, s.segment_index, s.sample_rate_hz
            )));
        }
        if s.samples.len() != first.samples.len() {
            return Err(Error::Contract(
                "segments in one batch must share their length".into(),
            ));
        }
    }
    Ok(())
}

/// The three encoders, with parameters under `audio.`, `spec.` and `text.`.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub audio: AudioEncoder,
    pub spec: SpecEncoder,
    pub text: TextEncoder,
}

impl Encoders {
    pub fn new(config: &EncoderConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = init_rng(config.seed);
        Ok(Self {
            audio: AudioEncoder::new(store, &mut rng, "audio", &config.audio, config.d)?,
            spec: SpecEncoder::new(store, &mut rng, "spec", &config.spec, config.d)?,
            text: TextEncoder::new(store, &mut rng, "text", &config.text, config.d)?,
            config: config.clone(),
        })
    }

    pub fn audio_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        segments: &[&AudioSegment],
    ) -> Result<Var> {
        check_audio_batch(segments)?;
        let signals: Vec<&[f64]> = segments.iter().map(|s| s.samples.as_slice()).collect();
        self.audio.forward(tape, store, &signals, SAMPLE_RATE)
    }

    pub fn spec_input(&self, segment: &AudioSegment) -> Result<Spectrogram> {
        spec_features(segment, &self.config.spec)
    }

    pub fn audio_encode(
        &self,
        store: &ParamStore,
        segments: &[&AudioSegment],
    ) -> Result<Vec<Embedding>> {
        let mut tape = Tape::no_grad();
        let v = self.audio_forward(&mut tape, store, segments)?;
        Ok(embeddings_from(&tape, v, Modality::Audio))
    }

    pub fn spec_encode(
        &self,
        store: &ParamStore,
        specs: &[&Spectrogram],
    ) -> Result<Vec<Embedding>> {
        let mut tape = Tape::no_grad();
        let v = self.spec.forward(&mut tape, store, specs)?;
        Ok(embeddings_from(&tape, v, Modality::Spec))
    }

    pub fn text_encode(
        &self,
        store: &ParamStore,
        seqs: &[&TokenSequence],
    ) -> Result<Vec<Embedding>> {
        let mut tape = Tape::no_grad();
        let v = self.text.forward(&mut tape, store, seqs)?;
        Ok(embeddings_from(&tape, v, Modality::Text))
    }
}
