//! Loss, optimizer, training loop and evaluation metrics.

mod adam;
mod metrics;
mod runner;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{acc, auc, average_ranks, bce, bce_loss, spearman, Metrics, EPS};
pub use runner::{
    batch_step_gradients, evaluate, labels, predict_responses, train, EpochRecord, TrainConfig,
    TrainHistory,
};
