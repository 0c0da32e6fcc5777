use serde::{Deserialize, Serialize};

use crate::dsp::{FbspParams, SpectrogramKind, WaveletConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub wavelet: WaveletConfig,
    pub wavelet_init: FbspParams,
    /// Train m, f_b and f_c together with the network.
    pub learn_wavelet: bool,
    pub channels: Vec<usize>,
    /// `ln(|W| + eps)` before standardisation; `None` keeps magnitudes.
    pub log_eps: Option<f64>,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            wavelet: WaveletConfig::default(),
            wavelet_init: FbspParams::default(),
            learn_wavelet: true,
            channels: vec![8, 16, 32],
            log_eps: Some(1e-4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecConfig {
    pub kind: SpectrogramKind,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    /// Filter count when `kind` is mel.
    pub n_mels: usize,
    /// Adjacent frequency bins averaged together before the network.
    pub freq_pool: usize,
    pub channels: Vec<usize>,
    pub heads: usize,
    pub log_eps: Option<f64>,
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self {
            kind: SpectrogramKind::Stft,
            frame_length_ms: 100.0,
            frame_shift_ms: 50.0,
            n_mels: 300,
            freq_pool: 16,
            channels: vec![8, 16],
            heads: 2,
            log_eps: Some(1e-4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            max_len: 77,
            width: 64,
            layers: 2,
            heads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Shared embedding width of all three encoders.
    pub d: usize,
    pub audio: AudioConfig,
    pub spec: SpecConfig,
    pub text: TextConfig,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            audio: AudioConfig::default(),
            spec: SpecConfig::default(),
            text: TextConfig::default(),
            seed: 0,
        }
    }
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{what} must be at least 1")));
    }
    Ok(())
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        positive("d", self.d)?;
        if self.audio.channels.is_empty() || self.spec.channels.is_empty() {
            return Err(Error::Config("conv channel lists must be non-empty".into()));
        }
        for &c in self.audio.channels.iter().chain(&self.spec.channels) {
            positive("conv channel width", c)?;
        }
        positive("wavelet hop", self.audio.wavelet.hop)?;
        positive("wavelet scale count", self.audio.wavelet.n_scales)?;
        self.audio.wavelet_init.validate()?;
        positive("spectrogram frequency pooling", self.spec.freq_pool)?;
        positive("attention pooling heads", self.spec.heads)?;
        let spec_width = *self.spec.channels.last().unwrap();
        if spec_width % self.spec.heads != 0 {
            return Err(Error::Config(format!(
                "attention pooling width {spec_width} is not divisible by {} heads",
                self.spec.heads
            )));
        }
        let t = &self.text;
        positive("text width", t.width)?;
        positive("text layers", t.layers)?;
        positive("text heads", t.heads)?;
        if t.width % t.heads != 0 {
            return Err(Error::Config(format!(
                "text width {} is not divisible by {} heads",
                t.width, t.heads
            )));
        }
        if t.max_len < 2 {
            return Err(Error::Config(
                "text max_len must leave room for [SOS] and [EOS]".into(),
            ));
        }
        if t.vocab_size <= 259 {
            return Err(Error::Config(format!(
                "text vocab_size must exceed 259, got {}",
                t.vocab_size
            )));
        }
        for eps in [self.audio.log_eps, self.spec.log_eps]
            .into_iter()
            .flatten()
        {
            if !(eps > 0.0) {
                return Err(Error::Config("log epsilon must be positive".into()));
            }
        }
        Ok(())
    }
}
