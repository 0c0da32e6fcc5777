use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompt::argmax_first;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::contrastive::UartModel;
use crate::data::{Dataset, Example};
use crate::dsp::{AudioSegment, SAMPLE_RATE};
use crate::encoders::{
    check_audio_batch, init_rng, AudioEncoder, Checkpoint, EncoderConfig, Linear,
};
use crate::error::{Error, Result};
use crate::text::LABEL_SLOT;

pub(crate) const CLASSIFIER_KIND: &str = "classifier";
const MULTI_HOT_TASK: &str = "multi_hot";
const PREDICT_CHUNK: usize = 16;

/// One prediction target: an annotation field (`label` for the vessel type)
/// and its class list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: String,
    pub classes: Vec<String>,
}

impl TaskSpec {
    pub fn new(task: &str, classes: Vec<String>) -> Self {
        Self {
            task: task.into(),
            classes,
        }
    }

    pub fn category(classes: Vec<String>) -> Self {
        Self::new(LABEL_SLOT, classes)
    }

    /// Values of `field` in `ds`, first-seen order.
    pub fn from_data(ds: &Dataset, field: &str) -> Self {
        let mut classes: Vec<String> = Vec::new();
        for e in &ds.examples {
            if let Some(v) = e.annotation.field(field) {
                if !classes.iter().any(|c| c == v) {
                    classes.push(v.to_string());
                }
            }
        }
        Self::new(field, classes)
    }

    pub fn is_category(&self) -> bool {
        self.task == LABEL_SLOT || self.task == "vessel_type"
    }

    fn index_of(&self, ex: &Example) -> Result<Option<usize>> {
        let Some(v) = ex.annotation.field(&self.task) else {
            return Ok(None);
        };
        match self.classes.iter().position(|c| c == v) {
            Some(i) => Ok(Some(i)),
            None if self.is_category() => Err(Error::Config(format!(
                "vessel type `{v}` of {} is not among the classifier's classes",
                ex.source_id()
            ))),
            None => Ok(None),
        }
    }
}

/// Fused `field=value` vocabulary of the multi-label baseline. Category
/// entries come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelDictionary {
    pub entries: Vec<(String, String)>,
}

impl LabelDictionary {
    pub fn build(ds: &Dataset, aux_fields: &[&str]) -> Result<Self> {
        let mut entries = Vec::new();
        for field in std::iter::once(LABEL_SLOT).chain(aux_fields.iter().copied()) {
            for v in TaskSpec::from_data(ds, field).classes {
                entries.push((field.to_string(), v));
            }
        }
        if entries.is_empty() {
            return Err(Error::Config("multi-label dictionary is empty".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn category_dims(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].0 == LABEL_SLOT)
            .collect()
    }

    /// Multi-hot target: one per annotated value found in the dictionary.
    pub fn target(&self, ex: &Example) -> Vec<f64> {
        self.entries
            .iter()
            .map(|(f, v)| f64::from(ex.annotation.field(f) == Some(v.as_str())))
            .collect()
    }

    pub fn to_task(&self) -> TaskSpec {
        TaskSpec::new(
            MULTI_HOT_TASK,
            self.entries
                .iter()
                .map(|(f, v)| format!("{f}={v}"))
                .collect(),
        )
    }

    fn from_task(task: &TaskSpec) -> Result<Self> {
        let entries = task
            .classes
            .iter()
            .map(|c| {
                c.split_once('=')
                    .map(|(f, v)| (f.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("malformed multi-label entry `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }
}

/// Highest-scoring category dimension; auxiliary dimensions never win.
pub fn restricted_argmax(scores: &[f64], dims: &[usize]) -> Option<usize> {
    let sub: Vec<f64> = dims.iter().map(|&i| scores[i]).collect();
    argmax_first(&sub).map(|j| dims[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Softmax cross-entropy per task, losses summed.
    Softmax,
    /// One sigmoid per dictionary entry, binary cross-entropy.
    MultiHot,
}

/// Linear map from the embedding to one task's logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub task: TaskSpec,
    linear: Linear,
}

impl ClassifierHead {
    pub fn width(&self) -> usize {
        self.task.classes.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMetadata {
    kind: String,
    encoder_config: EncoderConfig,
    objective: Objective,
    tasks: Vec<TaskSpec>,
    seed: u64,
    train_sources: Vec<String>,
}

/// Audio encoder plus task heads; the spectrogram and text encoders are
/// not part of it.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: EncoderConfig,
    pub objective: Objective,
    pub store: ParamStore,
    pub audio: AudioEncoder,
    pub heads: Vec<ClassifierHead>,
    pub seed: u64,
    pub train_sources: Vec<String>,
    dictionary: Option<LabelDictionary>,
}

impl Classifier {
    /// Randomly initialised. For [`Objective::Softmax`] the first task must be
    /// the category task; [`Objective::MultiHot`] takes one dictionary task.
    pub fn new(
        config: &EncoderConfig,
        objective: Objective,
        tasks: Vec<TaskSpec>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let dictionary = match objective {
            Objective::Softmax => {
                match tasks.first() {
                    Some(t) if t.is_category() => {}
                    _ => {
                        return Err(Error::Config(
                            "the category task is required and comes first".into(),
                        ))
                    }
                }
                for t in &tasks {
                    if t.classes.len() < 2 {
                        return Err(Error::Config(format!(
                            "task `{}` needs at least 2 classes, got {}",
                            t.task,
                            t.classes.len()
                        )));
                    }
                }
                let mut names: Vec<&str> = tasks.iter().map(|t| t.task.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() != tasks.len() {
                    return Err(Error::Config("duplicate task".into()));
                }
                None
            }
            Objective::MultiHot => {
                let [task] = tasks.as_slice() else {
                    return Err(Error::Config(
                        "multi-label model takes exactly one dictionary".into(),
                    ));
                };
                let dict = LabelDictionary::from_task(task)?;
                if dict.is_empty() {
                    return Err(Error::Config("multi-label dictionary is empty".into()));
                }
                if dict.category_dims().is_empty() {
                    return Err(Error::Config(
                        "multi-label dictionary has no category entries".into(),
                    ));
                }
                Some(dict)
            }
        };
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let audio = AudioEncoder::new(&mut store, &mut rng, "audio", &config.audio, config.d)?;
        let heads = tasks
            .into_iter()
            .map(|task| {
                let linear = Linear::new(
                    &mut store,
                    &mut rng,
                    &format!("head.{}", task.task),
                    config.d,
                    task.classes.len(),
                    true,
                    1.0,
                )?;
                Ok(ClassifierHead { task, linear })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            objective,
            store,
            audio,
            heads,
            seed,
            train_sources: Vec::new(),
            dictionary,
        })
    }

    pub fn multi_hot(
        config: &EncoderConfig,
        dictionary: &LabelDictionary,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            config,
            Objective::MultiHot,
            vec![dictionary.to_task()],
            seed,
        )
    }

    /// Copy the audio encoder weights (wavelet included) of a tri-modal model.
    pub fn load_audio_from(&mut self, model: &UartModel) -> Result<usize> {
        model
            .to_checkpoint()
            .load_into(&mut self.store, |name| name.starts_with("audio."))
    }

    pub fn dictionary(&self) -> Option<&LabelDictionary> {
        self.dictionary.as_ref()
    }

    pub fn category_classes(&self) -> Vec<String> {
        match &self.dictionary {
            Some(d) => d
                .category_dims()
                .iter()
                .map(|&i| d.entries[i].1.clone())
                .collect(),
            None => self.heads[0].task.classes.clone(),
        }
    }

    /// Parameters of the audio encoder.
    pub fn encoder_ids(&self) -> Vec<crate::autodiff::ParamId> {
        self.store
            .ids()
            .filter(|id| self.store.name(*id).starts_with("audio."))
            .collect()
    }

    pub fn embed(&self, tape: &mut Tape, segments: &[&AudioSegment]) -> Result<Var> {
        check_audio_batch(segments)?;
        let signals: Vec<&[f64]> = segments.iter().map(|s| s.samples.as_slice()).collect();
        self.audio.forward(tape, &self.store, &signals, SAMPLE_RATE)
    }

    pub fn head_logits(&self, tape: &mut Tape, emb: Var, head: usize) -> Result<Var> {
        self.heads[head]
            .linear
            .bind(tape, &self.store)
            .apply(tape, emb)
    }

    /// Training loss of a batch whose embeddings are `emb`.
    pub fn loss(&self, tape: &mut Tape, emb: Var, batch: &[&Example]) -> Result<Var> {
        let b = batch.len();
        if let Some(dict) = &self.dictionary {
            let z = self.head_logits(tape, emb, 0)?;
            let n = dict.len();
            let y: Vec<f64> = batch.iter().flat_map(|e| dict.target(e)).collect();
            let y = tape.constant(vec![b, n], y)?;
            let sp = tape.softplus(z);
            let yz = tape.mul(y, z)?;
            let per = tape.sub(sp, yz)?;
            return Ok(tape.mean(per));
        }
        let mut total: Option<Var> = None;
        for (h, head) in self.heads.iter().enumerate() {
            let n = head.width();
            let mut mask = vec![0.0; b * n];
            let mut count = 0usize;
            for (i, e) in batch.iter().enumerate() {
                if let Some(c) = head.task.index_of(e)? {
                    mask[i * n + c] = 1.0;
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let z = self.head_logits(tape, emb, h)?;
            let lp = tape.log_softmax_rows(z);
            let mask = tape.constant(vec![b, n], mask)?;
            let picked = tape.mul(lp, mask)?;
            let s = tape.sum(picked);
            let term = tape.scale(s, -1.0 / count as f64);
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::EmptyInput("no labelled sample in batch".into()))
    }

    /// Category prediction from an embedding row batch.
    fn category_from_logits(&self, logits: &[f64], n: usize) -> Vec<String> {
        let classes = &self.heads[0].task.classes;
        logits
            .chunks(n)
            .map(|row| match &self.dictionary {
                Some(d) => {
                    let i =
                        restricted_argmax(row, &d.category_dims()).expect("category dims exist");
                    d.entries[i].1.clone()
                }
                None => classes[argmax_first(row).expect("non-empty head")].clone(),
            })
            .collect()
    }

    /// Vessel type per segment from the category head only.
    pub fn predict(&self, segments: &[&AudioSegment]) -> Result<Vec<String>> {
        let n = self.heads[0].width();
        let mut out = Vec::with_capacity(segments.len());
        for chunk in segments.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::no_grad();
            let emb = self.embed(&mut tape, chunk)?;
            let z = self.head_logits(&mut tape, emb, 0)?;
            out.extend(self.category_from_logits(tape.value(z), n));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ClassifierMetadata {
            kind: CLASSIFIER_KIND.into(),
            encoder_config: self.config.clone(),
            objective: self.objective,
            tasks: self.heads.iter().map(|h| h.task.clone()).collect(),
            seed: self.seed,
            train_sources: self.train_sources.clone(),
        };
        Checkpoint::from_store(
            serde_json::to_value(meta).expect("metadata serialises"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: ClassifierMetadata = serde_json::from_value(ckpt.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("not a classifier checkpoint: {e}")))?;
        if meta.kind != CLASSIFIER_KIND {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a `{}` model, expected `{CLASSIFIER_KIND}`",
                meta.kind
            )));
        }
        let mut c = Self::new(&meta.encoder_config, meta.objective, meta.tasks, meta.seed)?;
        ckpt.load_into(&mut c.store, |_| true)?;
        c.train_sources = meta.train_sources;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
