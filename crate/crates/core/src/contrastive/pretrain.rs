use super::model::{TrainItem, UartModel};
use super::trainer::{EpochMetrics, TrainConfig, Trainer};
use crate::data::Dataset;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::text::{candidate_queue, TemplateSpec};

/// Render every example under `template` and prepare all three modalities.
pub fn build_items(
    model: &UartModel,
    ds: &Dataset,
    template: &TemplateSpec,
) -> Result<Vec<TrainItem>> {
    ds.examples
        .iter()
        .map(|e| {
            let sentence = e.sentence(template)?;
            model.prepare(e.segment.clone(), sentence, e.label().to_string())
        })
        .collect()
}

/// Train a tokenizer on the training sentences and the candidate queue,
/// build a fresh model and run the contrastive epochs.
pub fn pretrain(
    ds: &Dataset,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    template: &TemplateSpec,
    test_template: &TemplateSpec,
) -> Result<(UartModel, Vec<EpochMetrics>)> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("no training segments".into()));
    }
    let labels = ds.labels();
    let mut corpus = ds.sentences(template)?;
    corpus.extend(candidate_queue(test_template, &labels)?);
    let mut model = UartModel::from_corpus(encoder, &corpus)?;
    model.labels = labels;
    model.train_sources = ds.sources().into_iter().map(|(s, _)| s).collect();
    model.template = template.clone();
    model.test_template = test_template.clone();
    let items = build_items(&model, ds, template)?;
    let log = Trainer::new(train.clone())?.fit(&mut model, &items)?;
    Ok((model, log))
}
