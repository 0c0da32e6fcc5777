use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffTensor, ParamId, ParamStore, Tape, Var};
use crate::dsp::{AudioSegment, Spectrogram};
use crate::encoders::{embeddings_from, Checkpoint, Embedding, EncoderConfig, Encoders, Modality};
use crate::error::{Error, Result};
use crate::text::{BpeTokenizer, TemplateSpec, TokenSequence};

/// Largest logit multiplier `e^scale`.
pub const MAX_EXP_SCALE: f64 = 100.0;

/// The three learnable log-temperatures, one per modality pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleCoefficients {
    pub at: ParamId,
    pub ts: ParamId,
    pub as_: ParamId,
}

impl ScaleCoefficients {
    pub fn register(store: &mut ParamStore, learnable: bool) -> Result<Self> {
        let mut one = |name: &str| -> Result<ParamId> {
            let mut t = DiffTensor::param(vec![1], vec![0.0])?;
            t.set_requires_grad(learnable);
            store.insert(format!("scale.{name}"), t)
        };
        Ok(Self {
            at: one("at")?,
            ts: one("ts")?,
            as_: one("as")?,
        })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.at, self.ts, self.as_]
    }

    pub fn set_learnable(&self, store: &mut ParamStore, learnable: bool) {
        for id in self.ids() {
            store.get_mut(id).set_requires_grad(learnable);
        }
    }

    /// `[e^at, e^ts, e^as]`.
    pub fn multipliers(&self, store: &ParamStore) -> [f64; 3] {
        self.ids().map(|id| store.get(id).values()[0].exp())
    }

    /// Keep every multiplier at or below [`MAX_EXP_SCALE`].
    pub fn clamp(&self, store: &mut ParamStore) {
        let cap = MAX_EXP_SCALE.ln();
        for id in self.ids() {
            let v = &mut store.get_mut(id).values_mut()[0];
            *v = v.min(cap);
        }
    }
}

/// One training example with every modality prepared.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub segment: AudioSegment,
    pub spec: Spectrogram,
    pub sentence: String,
    pub tokens: TokenSequence,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UartMetadata {
    kind: String,
    encoder_config: EncoderConfig,
    tokenizer: String,
    labels: Vec<String>,
    train_sources: Vec<String>,
    template: String,
    test_template: String,
}

pub(crate) const UART_KIND: &str = "uart";

/// Encoders, scale coefficients and tokenizer of the tri-modal model.
#[derive(Debug, Clone)]
pub struct UartModel {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub scales: ScaleCoefficients,
    pub tokenizer: BpeTokenizer,
    /// Vessel types seen in training, in first-seen order.
    pub labels: Vec<String>,
    /// Recordings used for training, for leakage checks at evaluation.
    pub train_sources: Vec<String>,
    pub template: TemplateSpec,
    pub test_template: TemplateSpec,
}

impl UartModel {
    pub fn new(config: &EncoderConfig, tokenizer: BpeTokenizer) -> Result<Self> {
        if tokenizer.vocab_len() > config.text.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} tokens but the text encoder holds {}",
                tokenizer.vocab_len(),
                config.text.vocab_size
            )));
        }
        let mut store = ParamStore::new();
        let encoders = Encoders::new(config, &mut store)?;
        let scales = ScaleCoefficients::register(&mut store, true)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoders,
            scales,
            tokenizer,
            labels: Vec::new(),
            train_sources: Vec::new(),
            template: TemplateSpec::default_training(),
            test_template: TemplateSpec::label_only(),
        })
    }

    /// Train the tokenizer on `corpus`, then build a model around it.
    pub fn from_corpus(config: &EncoderConfig, corpus: &[String]) -> Result<Self> {
        config.validate()?;
        let tokenizer = BpeTokenizer::train(corpus, config.text.vocab_size)?;
        Self::new(config, tokenizer)
    }

    pub fn tokenize(&self, sentence: &str) -> TokenSequence {
        self.tokenizer.tokenize(sentence, self.config.text.max_len)
    }

    pub fn prepare(
        &self,
        segment: AudioSegment,
        sentence: String,
        label: String,
    ) -> Result<TrainItem> {
        let spec = self.encoders.spec_input(&segment)?;
        let tokens = self.tokenize(&sentence);
        Ok(TrainItem {
            segment,
            spec,
            sentence,
            tokens,
            label,
        })
    }

    pub fn audio_forward(&self, tape: &mut Tape, segments: &[&AudioSegment]) -> Result<Var> {
        self.encoders.audio_forward(tape, &self.store, segments)
    }

    pub fn embed_audio(&self, segments: &[&AudioSegment]) -> Result<Vec<Embedding>> {
        self.encoders.audio_encode(&self.store, segments)
    }

    pub fn embed_text(&self, sentences: &[String]) -> Result<Vec<Embedding>> {
        let seqs: Vec<TokenSequence> = sentences.iter().map(|s| self.tokenize(s)).collect();
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let mut tape = Tape::no_grad();
        let v = self.encoders.text.forward(&mut tape, &self.store, &refs)?;
        Ok(embeddings_from(&tape, v, Modality::Text))
    }

    pub fn embed_spec(&self, specs: &[&Spectrogram]) -> Result<Vec<Embedding>> {
        self.encoders.spec_encode(&self.store, specs)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = UartMetadata {
            kind: UART_KIND.into(),
            encoder_config: self.config.clone(),
            tokenizer: self.tokenizer.to_merge_list(),
            labels: self.labels.clone(),
            train_sources: self.train_sources.clone(),
            template: self.template.to_text(),
            test_template: self.test_template.to_text(),
        };
        Checkpoint::from_store(
            serde_json::to_value(meta).expect("metadata serialises"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: UartMetadata = serde_json::from_value(ckpt.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("not a tri-modal checkpoint: {e}")))?;
        if meta.kind != UART_KIND {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a `{}` model, expected `{UART_KIND}`",
                meta.kind
            )));
        }
        let tokenizer = BpeTokenizer::from_merge_list(&meta.tokenizer)?;
        let mut model = Self::new(&meta.encoder_config, tokenizer)?;
        ckpt.load_into(&mut model.store, |_| true)?;
        model.labels = meta.labels;
        model.train_sources = meta.train_sources;
        model.template = TemplateSpec::parse(&meta.template)?;
        model.test_template = TemplateSpec::parse(&meta.test_template)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Checkpoint of this model under a different encoder config must
    /// describe the same architecture.
    pub fn check_compatible(&self, config: &EncoderConfig) -> Result<()> {
        if config.d != self.config.d {
            return Err(Error::Checkpoint(format!(
                "checkpoint embeds into {} dimensions, config asks for {}",
                self.config.d, config.d
            )));
        }
        if config.audio.channels != self.config.audio.channels
            || config.spec.channels != self.config.spec.channels
            || config.text.width != self.config.text.width
            || config.text.layers != self.config.text.layers
            || config.text.vocab_size != self.config.text.vocab_size
            || config.text.max_len != self.config.text.max_len
        {
            return Err(Error::Checkpoint(
                "checkpoint architecture differs from the requested config".into(),
            ));
        }
        Ok(())
    }
}
