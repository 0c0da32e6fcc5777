use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anomaly::surviving_rows;
use super::loss::{contrastive_loss, logits_on_tape};
use super::model::{ScaleCoefficients, TrainItem, UartModel};
use crate::autodiff::{AdamConfig, AdamW, ParamStore, Tape, Var};
use crate::dsp::{AudioSegment, Spectrogram};
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModalitySet {
    /// Audio, spectrogram and text: six loss terms.
    #[default]
    Tri,
    /// Audio and text only: two loss terms, spectrogram encoder unused.
    AudioText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub modalities: ModalitySet,
    pub learn_scales: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 100,
            optimizer: AdamConfig::default(),
            seed: 0,
            modalities: ModalitySet::Tri,
            learn_scales: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for contrastive training, got {}",
                self.batch_size
            )));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.weight_decay >= 0.0 && o.epsilon > 0.0) {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over batches that produced a finite loss.
    pub mean_loss: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub nonfinite_losses: usize,
    /// `e^scale` for the audio-text, text-spec and audio-spec pairs.
    pub exp_scales: [f64; 3],
}

impl EpochMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} mean_loss={} batches={} skipped_batches={} nonfinite_losses={} exp_scale_at={} exp_scale_ts={} exp_scale_as={}",
            self.epoch,
            self.mean_loss,
            self.batches,
            self.skipped_batches,
            self.nonfinite_losses,
            self.exp_scales[0],
            self.exp_scales[1],
            self.exp_scales[2]
        )
    }
}

/// One line per epoch.
pub fn training_log(metrics: &[EpochMetrics]) -> String {
    metrics.iter().map(|m| m.log_line() + "\n").collect()
}

/// Six-term (or two-term) loss of one batch on `tape`. Samples with a
/// zero-norm embedding in any modality are dropped first; fewer than two
/// survivors is a [`Error::DegenerateBatch`].
pub fn batch_loss(
    encoders: &Encoders,
    scales: &ScaleCoefficients,
    store: &ParamStore,
    tape: &mut Tape,
    items: &[&TrainItem],
    modalities: ModalitySet,
) -> Result<Var> {
    let segs: Vec<&AudioSegment> = items.iter().map(|i| &i.segment).collect();
    let toks: Vec<&TokenSequence> = items.iter().map(|i| &i.tokens).collect();
    let mut a = encoders.audio_forward(tape, store, &segs)?;
    let mut t = encoders.text.forward(tape, store, &toks)?;
    let mut s = match modalities {
        ModalitySet::Tri => {
            let specs: Vec<&Spectrogram> = items.iter().map(|i| &i.spec).collect();
            Some(encoders.spec.forward(tape, store, &specs)?)
        }
        ModalitySet::AudioText => None,
    };

    let d = encoders.config.d;
    let mut rows: Vec<&[f64]> = vec![tape.value(a), tape.value(t)];
    if let Some(s) = s {
        rows.push(tape.value(s));
    }
    let keep = surviving_rows(&rows, d)?;
    if keep.len() < items.len() {
        log::debug!(
            "anomaly filter kept {} of {} samples",
            keep.len(),
            items.len()
        );
        a = tape.gather_rows(a, &keep)?;
        t = tape.gather_rows(t, &keep)?;
        if let Some(sv) = s {
            s = Some(tape.gather_rows(sv, &keep)?);
        }
    }

    let sc = |tape: &mut Tape, id| tape.param(store, id);
    let at_scale = sc(tape, scales.at);
    let mut logits = vec![logits_on_tape(tape, a, t, at_scale)?];
    if let Some(s) = s {
        let ts_scale = sc(tape, scales.ts);
        let as_scale = sc(tape, scales.as_);
        logits.push(logits_on_tape(tape, t, s, ts_scale)?);
        logits.push(logits_on_tape(tape, a, s, as_scale)?);
    }
    contrastive_loss(tape, &logits)
}

/// Shuffled batches of `batch_size`; a trailing single item joins the
/// previous batch so every batch has negatives.
pub(crate) fn make_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().map(Vec::len) == Some(1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Owns the optimizer state and the shuffling stream across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: AdamW::new(config.optimizer),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            epoch: 0,
            config,
        })
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    /// One pass over `items`: encode, filter, score, back-propagate and
    /// update every encoder, the wavelet and the scales together.
    pub fn train_epoch(
        &mut self,
        model: &mut UartModel,
        items: &[TrainItem],
    ) -> Result<EpochMetrics> {
        if items.len() < 2 {
            return Err(Error::EmptyInput(format!(
                "contrastive training needs at least 2 items, got {}",
                items.len()
            )));
        }
        model
            .scales
            .set_learnable(&mut model.store, self.config.learn_scales);
        self.epoch += 1;
        let batches = make_batches(items.len(), self.config.batch_size, &mut self.rng);
        let (mut total, mut counted, mut skipped, mut nonfinite) = (0.0, 0usize, 0usize, 0usize);
        for idx in &batches {
            let batch: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
            model.store.zero_grads();
            let mut tape = Tape::new();
            let loss = match batch_loss(
                &model.encoders,
                &model.scales,
                &model.store,
                &mut tape,
                &batch,
                self.config.modalities,
            ) {
                Ok(l) => l,
                Err(Error::DegenerateBatch { survivors }) => {
                    log::warn!("skipping batch with {survivors} usable samples");
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                log::warn!("non-finite loss {value} in epoch {}", self.epoch);
                nonfinite += 1;
                continue;
            }
            tape.backward(loss, &mut model.store)?;
            let ids: Vec<_> = model
                .store
                .ids()
                .filter(|id| model.store.get(*id).grad().is_some())
                .collect();
            self.optimizer.step(&mut model.store, &ids)?;
            model.encoders.audio.clamp_wavelet(&mut model.store);
            model.scales.clamp(&mut model.store);
            total += value;
            counted += 1;
        }
        let metrics = EpochMetrics {
            epoch: self.epoch,
            mean_loss: if counted > 0 {
                total / counted as f64
            } else {
                f64::NAN
            },
            batches: batches.len(),
            skipped_batches: skipped,
            nonfinite_losses: nonfinite,
            exp_scales: model.scales.multipliers(&model.store),
        };
        log::info!("{}", metrics.log_line());
        Ok(metrics)
    }

    /// Run `config.epochs` epochs.
    pub fn fit(&mut self, model: &mut UartModel, items: &[TrainItem]) -> Result<Vec<EpochMetrics>> {
        (0..self.config.epochs)
            .map(|_| self.train_epoch(model, items))
            .collect()
    }
}

/// One epoch with a fresh trainer state seeded from `config`.
pub fn train_epoch(
    model: &mut UartModel,
    items: &[TrainItem],
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    Trainer::new(config.clone())?.train_epoch(model, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_item_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..30 {
            let b = make_batches(n, 4, &mut rng);
            let mut all: Vec<usize> = b.iter().flatten().copied().collect();
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(b.iter().all(|x| x.len() >= 2));
        }
    }

    #[test]
    fn config_needs_negatives() {
        let c = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn log_line_format() {
        let m = EpochMetrics {
            epoch: 3,
            mean_loss: 1.5,
            batches: 4,
            skipped_batches: 1,
            nonfinite_losses: 0,
            exp_scales: [1.0, 2.5, 100.0],
        };
        assert_eq!(
            m.log_line(),
            "epoch=3 mean_loss=1.5 batches=4 skipped_batches=1 nonfinite_losses=0 exp_scale_at=1 exp_scale_ts=2.5 exp_scale_as=100"
        );
    }
}
