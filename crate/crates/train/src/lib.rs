//! Training, evaluation and experiment bookkeeping for fusion segmentation models.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod loss;
pub mod optim;
pub mod report;
pub mod run;
pub mod trainer;

pub use config::{AugmentSettings, ModelConfig, TrainConfig};
pub use data::NormStats;
pub use error::{Error, Result};
pub use loss::{loss, LossKind};
pub use optim::{lr_at, Adam};
pub use trainer::{train, EpochRecord, TrainHistory, Trained};
pub use report::{report, Report};
pub use run::{run_cv, run_fold, CvOutcome, Run, RunInfo, RunOutcome, RunRequest};
