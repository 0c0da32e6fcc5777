use crate::contrastive::{cosine_similarity, UartModel};
use crate::dsp::AudioSegment;
use crate::encoders::Embedding;
use crate::error::{Error, Result};
use crate::text::candidate_queue;

/// Audio segments encoded per forward pass during batch inference.
const INFER_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPrediction {
    pub index: usize,
    pub similarities: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties and NaNs never win.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.or(if values.is_empty() { None } else { Some(0) })
}

/// Cosine similarity of one audio embedding against every candidate.
pub fn predict_from_embeddings(
    audio: &Embedding,
    candidates: &[Embedding],
) -> Result<PromptPrediction> {
    if candidates.is_empty() {
        return Err(Error::Contract(
            "prompt inference needs at least one candidate".into(),
        ));
    }
    let similarities = candidates
        .iter()
        .map(|c| cosine_similarity(&audio.vector, &c.vector))
        .collect::<Result<Vec<_>>>()?;
    let index = argmax_first(&similarities).expect("non-empty");
    Ok(PromptPrediction {
        index,
        similarities,
    })
}

/// Classify each segment by its most similar candidate sentence. Only the
/// audio is consulted; candidates are encoded once.
pub fn prompt_infer_batch(
    model: &UartModel,
    segments: &[&AudioSegment],
    candidates: &[String],
) -> Result<Vec<PromptPrediction>> {
    if candidates.is_empty() {
        return Err(Error::Contract(
            "prompt inference needs at least one candidate".into(),
        ));
    }
    let text = model.embed_text(candidates)?;
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(INFER_CHUNK) {
        for a in model.embed_audio(chunk)? {
            out.push(predict_from_embeddings(&a, &text)?);
        }
    }
    Ok(out)
}

pub fn prompt_infer(
    model: &UartModel,
    segment: &AudioSegment,
    candidates: &[String],
) -> Result<PromptPrediction> {
    let mut p = prompt_infer_batch(model, &[segment], candidates)?;
    Ok(p.remove(0))
}

/// Vessel types predicted with the model's own test template and labels.
pub fn prompt_labels(
    model: &UartModel,
    segments: &[&AudioSegment],
    labels: &[String],
) -> Result<Vec<String>> {
    let candidates = candidate_queue(&model.test_template, labels)?;
    Ok(prompt_infer_batch(model, segments, &candidates)?
        .into_iter()
        .map(|p| labels[p.index].clone())
        .collect())
}
