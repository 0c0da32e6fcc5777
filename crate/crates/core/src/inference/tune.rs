use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, LabelDictionary, Objective, TaskSpec};
use crate::autodiff::{AdamConfig, AdamW, Tape};
use crate::contrastive::{
    build_items, make_batches, EpochMetrics, TrainConfig, Trainer, UartModel,
};
use crate::data::{Dataset, Example};
use crate::dsp::AudioSegment;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::text::TemplateSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Train the heads only; the audio encoder stays as initialised.
    pub freeze_encoder: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 100,
            optimizer: AdamConfig::default(),
            seed: 0,
            freeze_encoder: false,
        }
    }
}

/// Where the classifier's audio encoder comes from.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInit<'a> {
    Random(&'a EncoderConfig),
    Pretrained(&'a UartModel),
}

impl EncoderInit<'_> {
    fn build(&self, objective: Objective, tasks: Vec<TaskSpec>, seed: u64) -> Result<Classifier> {
        match self {
            EncoderInit::Random(cfg) => Classifier::new(cfg, objective, tasks, seed),
            EncoderInit::Pretrained(model) => {
                let mut c = Classifier::new(&model.config, objective, tasks, seed)?;
                c.load_audio_from(model)?;
                Ok(c)
            }
        }
    }
}

/// Train `clf` on `train`; returns the mean loss of every epoch.
pub fn fit_classifier(clf: &mut Classifier, train: &Dataset, cfg: &TuneConfig) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("no training segments".into()));
    }
    let encoder_ids = clf.encoder_ids();
    let saved: Vec<bool> = encoder_ids
        .iter()
        .map(|id| clf.store.get(*id).requires_grad())
        .collect();
    if cfg.freeze_encoder {
        for id in &encoder_ids {
            clf.store.get_mut(*id).set_requires_grad(false);
        }
    }
    let result = run_epochs(clf, &train.examples, cfg);
    for (id, flag) in encoder_ids.iter().zip(saved) {
        clf.store.get_mut(*id).set_requires_grad(flag);
    }
    if result.is_ok() {
        let mut sources: Vec<String> = train.sources().into_iter().map(|(s, _)| s).collect();
        clf.train_sources.append(&mut sources);
    }
    result
}

fn run_epochs(clf: &mut Classifier, examples: &[Example], cfg: &TuneConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = AdamW::new(cfg.optimizer);
    let d = clf.config.d;
    // a frozen encoder maps each segment to a fixed embedding
    let cached: Option<Vec<f64>> = if cfg.freeze_encoder {
        let segs: Vec<&AudioSegment> = examples.iter().map(|e| &e.segment).collect();
        let mut flat = Vec::with_capacity(segs.len() * d);
        for chunk in segs.chunks(16) {
            let mut tape = Tape::no_grad();
            let v = clf.embed(&mut tape, chunk)?;
            flat.extend_from_slice(tape.value(v));
        }
        Some(flat)
    } else {
        None
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(examples.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            clf.store.zero_grads();
            let mut tape = Tape::new();
            let emb = match &cached {
                Some(flat) => {
                    let rows: Vec<f64> = idx
                        .iter()
                        .flat_map(|&i| flat[i * d..(i + 1) * d].iter().copied())
                        .collect();
                    tape.constant(vec![idx.len(), d], rows)?
                }
                None => {
                    let segs: Vec<&AudioSegment> = batch.iter().map(|e| &e.segment).collect();
                    clf.embed(&mut tape, &segs)?
                }
            };
            let loss = clf.loss(&mut tape, emb, &batch)?;
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                log::warn!("non-finite classifier loss {value} in epoch {epoch}");
                continue;
            }
            tape.backward(loss, &mut clf.store)?;
            let ids: Vec<_> = clf
                .store
                .ids()
                .filter(|id| clf.store.get(*id).grad().is_some())
                .collect();
            optimizer.step(&mut clf.store, &ids)?;
            clf.audio.clamp_wavelet(&mut clf.store);
            total += value;
        }
        let mean = total / batches.len() as f64;
        log::info!("tune epoch={epoch} mean_loss={mean}");
        trace.push(mean);
    }
    Ok(trace)
}

/// Shared audio encoder with one softmax head per task, losses summed.
pub fn multitask_baseline(
    init: EncoderInit,
    train: &Dataset,
    tasks: &[TaskSpec],
    cfg: &TuneConfig,
) -> Result<(Classifier, Vec<f64>)> {
    if !tasks.iter().any(TaskSpec::is_category) {
        return Err(Error::Config(
            "multi-task training needs the category task".into(),
        ));
    }
    let mut ordered: Vec<TaskSpec> = tasks.iter().filter(|t| t.is_category()).cloned().collect();
    ordered.extend(tasks.iter().filter(|t| !t.is_category()).cloned());
    let mut clf = init.build(Objective::Softmax, ordered, cfg.seed)?;
    let trace = fit_classifier(&mut clf, train, cfg)?;
    Ok((clf, trace))
}

/// Drop the text and spectrogram encoders and train the audio encoder with
/// a softmax head over `classes`.
pub fn encoder_tune(
    init: EncoderInit,
    train: &Dataset,
    classes: &[String],
    cfg: &TuneConfig,
) -> Result<(Classifier, Vec<f64>)> {
    if classes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {}",
            classes.len()
        )));
    }
    multitask_baseline(init, train, &[TaskSpec::category(classes.to_vec())], cfg)
}

/// Audio encoder with one sigmoid per `field=value` entry.
pub fn multilabel_baseline(
    init: EncoderInit,
    train: &Dataset,
    aux_fields: &[&str],
    cfg: &TuneConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let dict = LabelDictionary::build(train, aux_fields)?;
    let mut clf = init.build(Objective::MultiHot, vec![dict.to_task()], cfg.seed)?;
    let trace = fit_classifier(&mut clf, train, cfg)?;
    Ok((clf, trace))
}

/// Continue contrastive training of a pretrained model on `train` rendered
/// under `template`. Model shapes never change; new vessel types are
/// appended to the label list.
pub fn uart_tune(
    mut model: UartModel,
    train: &Dataset,
    template: &TemplateSpec,
    cfg: &TrainConfig,
) -> Result<(UartModel, Vec<EpochMetrics>)> {
    for l in train.labels() {
        if !model.labels.contains(&l) {
            model.labels.push(l);
        }
    }
    for (s, _) in train.sources() {
        if !model.train_sources.contains(&s) {
            model.train_sources.push(s);
        }
    }
    model.template = template.clone();
    let items = build_items(&model, train, template)?;
    let log = Trainer::new(cfg.clone())?.fit(&mut model, &items)?;
    Ok((model, log))
}
