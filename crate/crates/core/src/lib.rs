//! Robust classifier training on datasets with noisy labels.
//!
//! The library keeps a per-sample history of recent model predictions, gates
//! samples on the entropy of those predictions, and replaces suspect labels
//! with the maximum-a-posteriori choice under a Bayesian posterior whose
//! likelihood is an exponentially time-weighted mean of the recorded
//! probabilities. Training proceeds conventionally through a warm-up period,
//! switches on once validation metrics enter a configured band, and from
//! then on updates the model on the small-loss "clean" subset of each batch
//! plus the refurbished samples.
//!
//! Modules:
//! - [`data`]: datasets, CSV interchange, synthetic generators, splits
//! - [`noise`]: transition matrices and seeded label corruption
//! - [`history`]: per-sample prediction windows and the uncertainty gate
//! - [`mod@refurbish`]: time weights, likelihood, posterior, MAP label choice
//! - [`startup`]: the warm-up / launch-condition state machine
//! - [`model`]: softmax-linear and one-hidden-layer classifiers, SGD/Adam
//! - [`mod@train`]: the full loop and the self-training pipeline
//! - [`metrics`]: purity, kappa, accuracy, AUC, confusion matrices
//! - [`report`]: deterministic file output for experiment artifacts

pub mod data;
pub mod history;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod refurbish;
pub mod report;
pub mod startup;
pub mod train;

pub use data::{split, synth_gaussians, Dataset, GaussianMixtureSpec, LabelSpace, Sample, SplitSpec};
pub use history::{HistoryStore, PredictionWindow};
pub use metrics::{accuracy, auc_binary, auc_macro_ovr, cohen_kappa, confusion, data_purity};
pub use model::{xent_loss, Architecture, ModelParams, OptimizerKind, OptimizerState};
pub use noise::{inject, FlipRecord, NoiseTransitionMatrix};
pub use refurbish::{
    likelihood, posterior, refurbish, EvidenceMode, RefurbishedSet, WeightVector,
};
pub use startup::{l_upper, StartupConfig, StartupMonitor};
pub use train::{
    composite_update, select_clean, self_train, train, EpochRow, SelfTrainReport, TrainConfig,
    TrainMode, TrainingReport,
};
