use rand_chacha::ChaCha8Rng;

use super::config::SpecConfig;
use super::layers::{multi_head_attention, sinusoidal_positions, standardize, ConvStack, Linear};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::dsp::{mel_with, stft_with, AudioSegment, Spectrogram, SpectrogramKind, StftConfig};
use crate::error::{Error, Result};

/// Spectrogram the spectrogram encoder consumes: STFT magnitude (or mel
/// power), with `freq_pool` adjacent bins averaged and optional log scaling.
pub fn spec_features(segment: &AudioSegment, cfg: &SpecConfig) -> Result<Spectrogram> {
    let stft = StftConfig {
        frame_length_ms: cfg.frame_length_ms,
        frame_shift_ms: cfg.frame_shift_ms,
    };
    let raw = match cfg.kind {
        SpectrogramKind::Stft => stft_with(segment, &stft)?,
        SpectrogramKind::Mel => mel_with(segment, cfg.n_mels, &stft)?,
        SpectrogramKind::Wavelet => {
            return Err(Error::Config(
                "the spectrogram encoder takes stft or mel input".into(),
            ))
        }
    };
    let p = cfg.freq_pool.max(1);
    let bins = raw.bins / p;
    if bins == 0 {
        return Err(Error::Config(format!(
            "frequency pooling {p} exceeds the {} available bins",
            raw.bins
        )));
    }
    let mut grid = Vec::with_capacity(raw.frames * bins);
    for t in 0..raw.frames {
        let row = raw.frame(t);
        for j in 0..bins {
            let v = row[j * p..(j + 1) * p].iter().sum::<f64>() / p as f64;
            grid.push(match cfg.log_eps {
                Some(eps) => (v + eps).ln(),
                None => v,
            });
        }
    }
    let bin_values = (0..bins)
        .map(|j| raw.bin_values[j * p..(j + 1) * p].iter().sum::<f64>() / p as f64)
        .collect();
    Ok(Spectrogram {
        grid,
        frames: raw.frames,
        bins,
        bin_values,
        ..raw
    })
}

/// Conv stack followed by attention pooling: a single query (the mean of
/// the spatial tokens) attends over all positions with learned Q/K/V maps.
#[derive(Debug, Clone)]
pub struct SpecEncoder {
    stack: ConvStack,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    width: usize,
}

impl SpecEncoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &SpecConfig,
        d: usize,
    ) -> Result<Self> {
        let stack = ConvStack::new(store, rng, &format!("{prefix}.conv"), &cfg.channels)?;
        let width = *cfg.channels.last().unwrap();
        let mut lin = |name: &str, out: usize| {
            Linear::new(
                store,
                rng,
                &format!("{prefix}.pool.{name}"),
                width,
                out,
                true,
                1.0,
            )
        };
        Ok(Self {
            q: lin("q", width)?,
            k: lin("k", width)?,
            v: lin("v", width)?,
            out: lin("out", d)?,
            stack,
            heads: cfg.heads,
            width,
        })
    }

    /// Embeddings `[B, d]` plus, per sample and head, the attention weights
    /// over spatial positions.
    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        specs: &[&Spectrogram],
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let Some(first) = specs.first() else {
            return Err(Error::Contract("spectrogram batch is empty".into()));
        };
        let (frames, bins) = (first.frames, first.bins);
        if frames == 0 || bins == 0 || first.grid.is_empty() {
            return Err(Error::Contract("empty spectrogram grid".into()));
        }
        if specs.iter().any(|s| s.frames != frames || s.bins != bins) {
            return Err(Error::Contract(
                "spectrograms in one batch must share their shape".into(),
            ));
        }
        let mut data = Vec::with_capacity(specs.len() * frames * bins);
        for s in specs {
            data.extend_from_slice(&s.grid);
        }
        let x = tape.constant(vec![specs.len(), 1, frames, bins], data)?;
        let x = standardize(tape, x)?;
        let h = self.stack.forward(tape, store, x)?;
        let s = tape.shape(h).to_vec();
        let (c, n) = (s[1], s[2] * s[3]);
        let pe = tape.constant(vec![n, c], sinusoidal_positions(n, c))?;
        let (q, k, v, o) = (
            self.q.bind(tape, store),
            self.k.bind(tape, store),
            self.v.bind(tape, store),
            self.out.bind(tape, store),
        );
        let mut rows = Vec::with_capacity(specs.len());
        let mut weights = Vec::with_capacity(specs.len());
        for b in 0..specs.len() {
            let hb = tape.slice(h, 0, b, b + 1)?;
            let hb = tape.reshape(hb, vec![c, n])?;
            let tokens = tape.transpose(hb)?;
            let tokens = tape.add(tokens, pe)?;
            let query = tape.mean_axis(tokens, 0)?;
            let qv = q.apply(tape, query)?;
            let kv = k.apply(tape, tokens)?;
            let vv = v.apply(tape, tokens)?;
            let (att, w) = multi_head_attention(tape, qv, kv, vv, self.heads, None)?;
            rows.push(o.apply(tape, att)?);
            weights.push(w);
        }
        debug_assert_eq!(c, self.width);
        let out = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat(&rows, 0)?
        };
        Ok((out, weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        specs: &[&Spectrogram],
    ) -> Result<Var> {
        Ok(self.forward_with_attention(tape, store, specs)?.0)
    }
}
