//! Experiment orchestration: configuration, checkpoints, and the commands
//! behind the `mtss` binary.

pub mod checkpoint;
pub mod config;
pub mod prepare;
pub mod report;
pub mod run;

pub use checkpoint::{Checkpoint, CheckpointMeta, DevMetric, OptimizerState};
pub use config::ExperimentConfig;
pub use prepare::{cmd_prepare, datasets, prepare_task, PreparedTask};
pub use report::{cmd_gradcheck, export_report, read_metrics, read_result, GradReport, Report};
pub use run::{cmd_eval, cmd_train, format_evaluation, summary_row, RunResult, TaskScore, TrainReport};
