//! Prompt inference, tuning strategies, classification baselines and
//! fold-based evaluation.

mod classifier;
mod classmap;
mod eval;
mod prompt;
mod tune;

pub use classifier::{
    restricted_argmax, Classifier, ClassifierHead, LabelDictionary, Objective, TaskSpec,
};
pub use classmap::ClassMap;
pub use eval::{
    cross_validate, evaluate, mean, predict_fold, score, ConfusionMatrix, EvalReport, FoldResult,
    Predictor,
};
pub use prompt::{
    argmax_first, predict_from_embeddings, prompt_infer, prompt_infer_batch, prompt_labels,
    PromptPrediction,
};
pub use tune::{
    encoder_tune, fit_classifier, multilabel_baseline, multitask_baseline, uart_tune, EncoderInit,
    TuneConfig,
};
