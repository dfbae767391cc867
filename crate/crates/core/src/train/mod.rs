//! Three-phase protocol: unlabeled pretraining, cell-line fine-tuning and
//! zero-shot patient evaluation.

mod auroc;
mod config;
mod engine;
mod sweep;

pub use auroc::auroc;
pub use config::{LambdaSchedule, TrainConfig, CONFIG_KEYS};
pub use engine::{
    evaluate, finetune, init_model, predict, predict_samples, pretrain, run_cell, DrugAuroc, EpochLog, EvalResult,
    FinetuneReport, PretrainAudit, PretrainReport,
};
pub use sweep::{
    percent_change, percent_change_table, run_zoo, write_epoch_log, write_per_drug, write_percent_change,
    write_results, PercentChange, RESULTS_HEADER,
};
