//! Optimization, the training loop and evaluation.

mod adam;
mod metrics;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{
    auroc, auroc_twice_u, evaluate, evaluate_priority, metrics_from_predictions, priority_from_predictions,
    LevelMetrics, MetricsReport, PriorityReport, PriorityRow,
};
pub use train::{train, EpochRecord, ProvenanceCounts, RunHistory, TrainConfig};
