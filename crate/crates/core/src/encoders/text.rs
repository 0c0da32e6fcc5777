use rand_chacha::ChaCha8Rng;

use super::config::TextConfig;
use super::layers::{
    apply_layer_norm, multi_head_attention, uniform_param, LayerNorm, Linear, RELU_GAIN,
};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::text::{TokenSequence, EOS};

const MASKED: f64 = -1e9;

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Pre-norm causal transformer over token + learned position embeddings;
/// the final-layer activation at `[EOS]` is projected to the shared width.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    tokens: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    proj: Linear,
    cfg: TextConfig,
}

impl TextEncoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &TextConfig,
        d: usize,
    ) -> Result<Self> {
        let w = cfg.width;
        // embeddings drawn with unit fan-in: entries of order 1 like the
        // normalised activations they feed
        let tokens = uniform_param(
            store,
            rng,
            format!("{prefix}.tok"),
            vec![cfg.vocab_size, w],
            1,
            0.1,
        )?;
        let positions = uniform_param(
            store,
            rng,
            format!("{prefix}.pos"),
            vec![cfg.max_len, w],
            1,
            0.1,
        )?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            blocks.push(Block {
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), w)?,
                qkv: Linear::new(store, rng, &format!("{p}.qkv"), w, 3 * w, true, 1.0)?,
                out: Linear::new(store, rng, &format!("{p}.out"), w, w, true, 1.0)?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), w)?,
                fc1: Linear::new(store, rng, &format!("{p}.fc1"), w, 4 * w, true, RELU_GAIN)?,
                fc2: Linear::new(store, rng, &format!("{p}.fc2"), 4 * w, w, true, 1.0)?,
            });
        }
        Ok(Self {
            tokens,
            positions,
            blocks,
            ln_final: LayerNorm::new(store, &format!("{prefix}.ln_final"), w)?,
            proj: Linear::new(store, rng, &format!("{prefix}.proj"), w, d, false, 1.0)?,
            cfg: cfg.clone(),
        })
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        let ids = seq.ids();
        if ids.last() != Some(&EOS) {
            return Err(Error::Contract(
                "token sequence has no trailing [EOS]".into(),
            ));
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::Contract(format!(
                "token sequence of length {} exceeds max_len {}",
                ids.len(),
                self.cfg.max_len
            )));
        }
        if let Some(bad) = ids.iter().find(|i| **i as usize >= self.cfg.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside a vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Embeddings `[B, d]`; sequences may differ in length.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seqs: &[&TokenSequence],
    ) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::Contract("text batch is empty".into()));
        }
        for s in seqs {
            self.check(s)?;
        }
        let w = self.cfg.width;
        let tok = tape.param(store, self.tokens);
        let pos = tape.param(store, self.positions);
        let blocks: Vec<_> = self
            .blocks
            .iter()
            .map(|b| {
                (
                    b.ln1.bind(tape, store),
                    b.qkv.bind(tape, store),
                    b.out.bind(tape, store),
                    b.ln2.bind(tape, store),
                    b.fc1.bind(tape, store),
                    b.fc2.bind(tape, store),
                )
            })
            .collect();
        let ln_final = self.ln_final.bind(tape, store);
        let proj = self.proj.bind(tape, store);

        let mut rows = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let ids: Vec<usize> = seq.ids().iter().map(|i| *i as usize).collect();
            let len = ids.len();
            let mut mask = vec![0.0; len * len];
            for i in 0..len {
                for j in i + 1..len {
                    mask[i * len + j] = MASKED;
                }
            }
            let mask = tape.constant(vec![len, len], mask)?;
            let e = tape.gather_rows(tok, &ids)?;
            let p = tape.slice(pos, 0, 0, len)?;
            let mut x = tape.add(e, p)?;
            for (ln1, qkv, out, ln2, fc1, fc2) in &blocks {
                let h = apply_layer_norm(tape, x, *ln1)?;
                let h = qkv.apply(tape, h)?;
                let q = tape.slice(h, 1, 0, w)?;
                let k = tape.slice(h, 1, w, 2 * w)?;
                let v = tape.slice(h, 1, 2 * w, 3 * w)?;
                let (att, _) = multi_head_attention(tape, q, k, v, self.cfg.heads, Some(mask))?;
                let att = out.apply(tape, att)?;
                x = tape.add(x, att)?;
                let h = apply_layer_norm(tape, x, *ln2)?;
                let h = fc1.apply(tape, h)?;
                let h = tape.relu(h);
                let h = fc2.apply(tape, h)?;
                x = tape.add(x, h)?;
            }
            let last = tape.slice(x, 0, len - 1, len)?;
            let last = apply_layer_norm(tape, last, ln_final)?;
            rows.push(proj.apply(tape, last)?);
        }
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            tape.concat(&rows, 0)
        }
    }
}
