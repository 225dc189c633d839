//! Optimization, model selection, cross-validation and experiment protocols.

mod crossval;
mod experiment;
mod fit;
mod optim;

pub use crossval::{fold_dir_name, run_crossval, CrossvalResult, FoldReport, CROSSVAL_SUMMARY, FOLD_REPORT};
pub use experiment::{
    evaluate_ensemble, holdout_split, load_networks, run_experiment, ExperimentOutcome, ExperimentProtocol, ExperimentSettings,
    DEFAULT_HOLDOUT_PER_DOMAIN,
};
pub use fit::{
    batch_tensors, fit, read_training_log, train_epoch, train_step, validate, validate_and_select, write_training_log, EpochRecord,
    FitResult, TrainState, Validation, BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAINING_LOG,
};
pub use optim::{clip_grad_norm, ema_update, poly_lr, sgd_nesterov_step, zero_velocity};
