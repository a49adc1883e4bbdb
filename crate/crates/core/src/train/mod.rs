//! Training loop and the quantitative protocol: cross-entropy, momentum SGD
//! with a step schedule, AUC-ROC and per-kind result tables.

pub mod auc;
pub mod experiment;
pub mod fit;
pub mod loss;
pub mod report;
pub mod schedule;
pub mod sgd;

pub use auc::auc_roc;
pub use experiment::{summarize, EvalReport, Experiment, RunRecord};
pub use fit::{derive_seed, evaluate, fit, write_epoch_log, EpochRecord, Evaluation, EPOCH_LOG_HEADER};
pub use loss::{cross_entropy, positive_probabilities};
pub use schedule::{lr_at, TrainConfig};
pub use sgd::{sgd_step, Sgd};
