//! Training orchestration, evaluation, comparison runs and reports.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod report;
pub mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use compare::{compare, CompareReport};
pub use config::{Algorithm, TrainConfig};
pub use eval::{evaluate, EvalResult};
pub use metrics::StepMetrics;
pub use report::{accuracy_matrix, entropy_token_report, AccuracyMatrix, TokenStat};
pub use train::{train, TrainOptions, TrainOutcome};
