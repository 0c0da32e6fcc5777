//! Tri-modal contrastive pretraining: similarity logits, the six-term
//! identity-target loss, zero-norm filtering and the epoch loop.

mod anomaly;
mod loss;
mod model;
mod pretrain;
mod trainer;

pub use anomaly::anomaly_filter;
pub use loss::{
    compute_logits, contrastive_loss, contrastive_loss_value, cosine_similarity, logits_on_tape,
};
pub use model::{ScaleCoefficients, TrainItem, UartModel, MAX_EXP_SCALE};
pub use pretrain::{build_items, pretrain};
pub(crate) use trainer::make_batches;
pub use trainer::{
    batch_loss, train_epoch, training_log, EpochMetrics, ModalitySet, TrainConfig, Trainer,
};
