//! Optimization and evaluation: Adam, batch pairing, the epoch loop, metrics.

pub mod adam;
pub mod batching;
pub mod dataset;
pub mod metrics;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use batching::{epoch_order, make_batches, make_mtl_batches};
pub use dataset::{Datasets, SplitName, TaskData};
pub use metrics::{ConfusionMatrix, Evaluation, MetricsRecord, TaskEvaluation};
pub use trainer::{check_data, evaluate, TrainOutcome, TrainPlan, Trainer};
