use rand_chacha::ChaCha8Rng;

use super::config::AudioConfig;
use super::layers::{spatial_mean, standardize, ConvStack, Linear};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::dsp::wavelet::wavelet_on_tape;
use crate::dsp::{ScaleGrid, WaveletParams};
use crate::error::{Error, Result};

/// Learnable wavelet front end, residual conv stack, global average pooling
/// and a linear projection to the shared width.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub wavelet: WaveletParams,
    grid: ScaleGrid,
    cfg: AudioConfig,
    stack: ConvStack,
    proj: Linear,
}

impl AudioEncoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &AudioConfig,
        d: usize,
    ) -> Result<Self> {
        let wavelet =
            WaveletParams::register(store, &format!("{prefix}.wavelet"), cfg.wavelet_init)?;
        for id in wavelet.ids() {
            store.get_mut(id).set_requires_grad(cfg.learn_wavelet);
        }
        let stack = ConvStack::new(store, rng, &format!("{prefix}.conv"), &cfg.channels)?;
        let width = *cfg.channels.last().unwrap();
        let proj = Linear::new(store, rng, &format!("{prefix}.proj"), width, d, true, 1.0)?;
        Ok(Self {
            wavelet,
            grid: cfg.wavelet.grid()?,
            cfg: cfg.clone(),
            stack,
            proj,
        })
    }

    pub fn scale_grid(&self) -> &ScaleGrid {
        &self.grid
    }

    /// Wavelet magnitudes `[B, 1, frames, scales]` after optional log
    /// compression and per-sample standardisation.
    pub(crate) fn front_end(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        signals: &[&[f64]],
        rate: u32,
    ) -> Result<Var> {
        if signals.is_empty() {
            return Err(Error::Contract("audio batch is empty".into()));
        }
        let w = &self.cfg.wavelet;
        let mut x = wavelet_on_tape(
            tape,
            store,
            &self.wavelet,
            signals,
            rate,
            &self.grid,
            w.hop,
            w.truncation,
        )?;
        if let Some(eps) = self.cfg.log_eps {
            let shifted = tape.add_scalar(x, eps);
            x = tape.log(shifted);
        }
        standardize(tape, x)
    }

    /// Embeddings `[B, d]` for a batch of equal-length signals.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        signals: &[&[f64]],
        rate: u32,
    ) -> Result<Var> {
        let x = self.front_end(tape, store, signals, rate)?;
        let h = self.stack.forward(tape, store, x)?;
        let pooled = spatial_mean(tape, h)?;
        self.proj.bind(tape, store).apply(tape, pooled)
    }

    pub fn clamp_wavelet(&self, store: &mut ParamStore) {
        self.wavelet.clamp(store);
    }
}
