//! The training loop: warm-up updates on observed labels, clean-sample
//! selection by small loss, uncertainty-gated label refurbishment, composite
//! updates on clean-plus-refurbished samples, and the self-training variant
//! that refurbishes pseudo-labels.
//!
//! Each run consumes one ChaCha8 stream seeded by the config: parameter
//! initialization first, then one shuffle per epoch. Identical configs and
//! seeds therefore reproduce every reported number bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{DataError, Dataset, Sample};
use crate::history::{argmax, HistoryError, HistoryStore};
use crate::metrics::{self, MetricsError};
use crate::model::{
    xent_loss, Architecture, ModelError, ModelParams, OptimizerKind, OptimizerState,
};
use crate::refurbish::{
    refurbish, EvidenceMode, RefurbishError, RefurbishedSet, WeightVector,
};
use crate::startup::{StartupConfig, StartupError, StartupMonitor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Refurbish(#[from] RefurbishError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Train on observed labels throughout, ignoring noise.
    Default,
    /// Full mechanism: selection, gating, refurbishment, composite updates.
    Lmm,
    /// Uniform time weights with hard argmax votes; the most-frequent-label
    /// scheme the weighted version is contrasted against.
    UniformVoteAblation,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Default => write!(f, "default"),
            TrainMode::Lmm => write!(f, "lmm"),
            TrainMode::UniformVoteAblation => write!(f, "uniform-vote-ablation"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Assumed noise rate; drives clean-set size and the startup threshold.
    pub gamma: f64,
    /// Prediction window width T.
    pub window_width: usize,
    /// Uncertainty threshold for the refurbishment gate.
    pub epsilon: f64,
    /// Exponential time-weight parameter.
    pub eta: f64,
    pub evidence: EvidenceMode,
    pub startup: StartupConfig,
    pub mode: TrainMode,
    pub seed: u64,
    pub arch: Architecture,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
}

impl TrainConfig {
    /// Defaults matching the usual experiment setup: Adam at 1e-4, batches
    /// of 32, T = 5, epsilon = 0.4, eta = 2, ten warm-up epochs.
    pub fn new(mode: TrainMode, gamma: f64, seed: u64) -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            gamma,
            window_width: 5,
            epsilon: 0.4,
            eta: 2.0,
            evidence: EvidenceMode::SoftProbability,
            startup: StartupConfig {
                noise_rate: gamma,
                ..StartupConfig::default()
            },
            mode,
            seed,
            arch: Architecture::SoftmaxLinear,
            optimizer: OptimizerKind::adam_default(),
            learning_rate: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(TrainError::Config(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(TrainError::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.window_width == 0 {
            return Err(TrainError::Config("window_width must be >= 1".into()));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(TrainError::Config(format!(
                "eta {} must be positive",
                self.eta
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One epoch's worth of reported metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub purity: Option<f64>,
    pub kappa: Option<f64>,
    pub psi_size: usize,
    pub lmm_active: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub rows: Vec<EpochRow>,
    pub trigger_epoch: Option<usize>,
    pub final_test_accuracy: f64,
    pub final_test_auc: Option<f64>,
    pub final_purity: Option<f64>,
    pub final_kappa: Option<f64>,
    pub skipped_batches: usize,
    pub warnings: Vec<String>,
    pub psi: RefurbishedSet,
    pub params: ModelParams,
}

/// Ids of the `floor((1 - gamma) * |B|)` smallest-loss samples, never fewer
/// than one; ties broken toward the lower sample id.
pub fn select_clean(batch_losses: &[(usize, f64)], gamma: f64) -> BTreeSet<usize> {
    let mut sorted: Vec<(usize, f64)> = batch_losses.to_vec();
    sorted.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite losses")
            .then(a.0.cmp(&b.0))
    });
    let keep = (((1.0 - gamma) * batch_losses.len() as f64).floor() as usize).max(1);
    sorted.into_iter().take(keep).map(|(id, _)| id).collect()
}

fn batch_update(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[(&[f64], usize)],
) -> Result<(), TrainError> {
    let grad = params.grad(batch)?;
    opt.step(params, &grad)?;
    Ok(())
}

/// One optimizer step on the refurbished-plus-clean part of a batch.
/// Refurbished membership takes precedence over clean membership, each
/// contributing sample counts once, and the loss is averaged over the
/// contributing samples only. Returns how many samples contributed; a batch
/// with none is skipped without stepping.
pub fn composite_update(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[&Sample],
    clean: &BTreeSet<usize>,
    psi: &RefurbishedSet,
) -> Result<usize, TrainError> {
    let mut effective: Vec<(&[f64], usize)> = Vec::with_capacity(batch.len());
    for sample in batch {
        if let Some(entry) = psi.get(sample.id) {
            effective.push((&sample.features, entry.label));
        } else if clean.contains(&sample.id) {
            effective.push((&sample.features, sample.observed_label));
        }
    }
    if effective.is_empty() {
        return Ok(0);
    }
    batch_update(params, opt, &effective)?;
    Ok(effective.len())
}

fn mean_loss_and_accuracy(
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<(f64, f64), TrainError> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    for s in dataset.samples() {
        let probs = params.forward(&s.features)?;
        loss += xent_loss(&probs, s.observed_label)?;
        if argmax(&probs) == s.observed_label {
            hits += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

fn current_labels(train: &Dataset, psi: &RefurbishedSet) -> BTreeMap<usize, usize> {
    train
        .samples()
        .iter()
        .map(|s| {
            let label = psi.get(s.id).map(|e| e.label).unwrap_or(s.observed_label);
            (s.id, label)
        })
        .collect()
}

fn train_loss_on_current_labels(
    params: &ModelParams,
    train: &Dataset,
    psi: &RefurbishedSet,
) -> Result<f64, TrainError> {
    let mut loss = 0.0;
    for s in train.samples() {
        let label = psi.get(s.id).map(|e| e.label).unwrap_or(s.observed_label);
        let probs = params.forward(&s.features)?;
        loss += xent_loss(&probs, label)?;
    }
    Ok(loss / train.len() as f64)
}

fn check_consistency(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<(), TrainError> {
    let d = train.feature_dim();
    let m = train.num_classes();
    for (name, ds) in [("val", val), ("test", test)] {
        if ds.feature_dim() != d {
            return Err(TrainError::Config(format!(
                "{name} feature_dim {} differs from train {d}",
                ds.feature_dim()
            )));
        }
        if ds.num_classes() != m {
            return Err(TrainError::Config(format!(
                "{name} has {} classes, train has {m}",
                ds.num_classes()
            )));
        }
    }
    Ok(())
}

/// Runs the full loop over `train_set`, monitoring `val_set` for the launch
/// decision and scoring `test_set` for reporting only. Test statistics never
/// feed back into training.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainingReport, TrainError> {
    config.validate()?;
    check_consistency(train_set, val_set, test_set)?;
    let m = train_set.num_classes();
    let dim = train_set.feature_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.arch.clone(), dim, m, &mut rng)?;
    let mut opt = OptimizerState::new(config.optimizer.clone(), config.learning_rate, params.len());
    let mut history = HistoryStore::new(config.window_width, train_set.label_space().clone())?;
    let mut psi = RefurbishedSet::new();
    let mut monitor = StartupMonitor::new(config.startup, m)?;
    let warnings = config.startup.warnings();

    let lmm_style = config.mode != TrainMode::Default;
    let (weights, evidence) = match config.mode {
        TrainMode::UniformVoteAblation => (
            WeightVector::uniform(config.window_width)?,
            EvidenceMode::HardIndicator,
        ),
        _ => (
            WeightVector::exponential(config.window_width, config.eta)?,
            config.evidence,
        ),
    };

    let audit = train_set.has_truth_labels();
    let truth: Vec<usize> = if audit {
        train_set.truth_labels().expect("checked above")
    } else {
        Vec::new()
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut prev_val: Option<(f64, f64)> = None;
    let mut rows: Vec<EpochRow> = Vec::with_capacity(config.epochs);
    let mut skipped_batches = 0usize;

    for epoch in 1..=config.epochs {
        let active = if lmm_style {
            match prev_val {
                Some((vl, va)) => monitor.check(epoch, vl, va)?,
                None => false,
            }
        } else {
            false
        };

        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&pos| train_set.sample(pos)).collect();
            if active {
                let probs: Vec<Vec<f64>> = batch
                    .iter()
                    .map(|s| params.forward(&s.features))
                    .collect::<Result<_, _>>()?;
                let losses: Vec<(usize, f64)> = batch
                    .iter()
                    .zip(&probs)
                    .map(|(s, p)| Ok((s.id, xent_loss(p, s.observed_label)?)))
                    .collect::<Result<_, ModelError>>()?;
                let clean = select_clean(&losses, config.gamma);

                // Gate and refurbish against the window of past epochs,
                // with the current prediction as the Bayesian prior.
                for (sample, prior) in batch.iter().zip(&probs) {
                    if history.is_refurbishable(sample.id, config.epsilon, &psi) {
                        if let Some(window) = history.window(sample.id) {
                            match refurbish(
                                sample.id, window, prior, &weights, evidence, epoch, &mut psi,
                            ) {
                                Ok(_) => {}
                                // No usable evidence this epoch: psi is left as is.
                                Err(RefurbishError::ZeroEvidence)
                                | Err(RefurbishError::WindowNotFull(_)) => {}
                                Err(e) => return Err(e.into()),
                            }
                        }
                    }
                }

                let contributed = composite_update(&mut params, &mut opt, &batch, &clean, &psi)?;
                if contributed == 0 {
                    skipped_batches += 1;
                }
                for (sample, p) in batch.iter().zip(&probs) {
                    history.record(sample.id, epoch, p)?;
                }
            } else {
                if lmm_style {
                    for sample in &batch {
                        let p = params.forward(&sample.features)?;
                        history.record(sample.id, epoch, &p)?;
                    }
                }
                let plain: Vec<(&[f64], usize)> = batch
                    .iter()
                    .map(|s| (s.features.as_slice(), s.observed_label))
                    .collect();
                batch_update(&mut params, &mut opt, &plain)?;
            }
        }

        let train_loss = train_loss_on_current_labels(&params, train_set, &psi)?;
        let (val_loss, val_acc) = mean_loss_and_accuracy(&params, val_set)?;
        let (_, test_acc) = mean_loss_and_accuracy(&params, test_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                what: format!("train_loss={train_loss}, val_loss={val_loss}"),
            });
        }
        let (purity, kappa) = if audit {
            let current = current_labels(train_set, &psi);
            let purity = metrics::data_purity(train_set, &current)?;
            let current_vec: Vec<usize> = train_set
                .samples()
                .iter()
                .map(|s| current[&s.id])
                .collect();
            let kappa = metrics::cohen_kappa(&current_vec, &truth, m)?;
            (Some(purity), Some(kappa))
        } else {
            (None, None)
        };
        rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            test_acc,
            purity,
            kappa,
            psi_size: psi.len(),
            lmm_active: active,
        });
        prev_val = Some((val_loss, val_acc));
    }

    let last = rows.last().expect("epochs >= 1");
    let final_test_auc = test_auc(&params, test_set).ok();
    Ok(TrainingReport {
        final_test_accuracy: last.test_acc,
        final_purity: last.purity,
        final_kappa: last.kappa,
        trigger_epoch: monitor.trigger_epoch(),
        skipped_batches,
        warnings,
        rows,
        final_test_auc,
        psi,
        params,
    })
}

fn test_auc(params: &ModelParams, test: &Dataset) -> Result<f64, TrainError> {
    let labels = test.observed_labels();
    let scores: Vec<Vec<f64>> = test
        .samples()
        .iter()
        .map(|s| params.forward(&s.features))
        .collect::<Result<_, _>>()?;
    let m = test.num_classes();
    let auc = if m == 2 {
        let positive: Vec<f64> = scores.iter().map(|p| p[1]).collect();
        metrics::auc_binary(&positive, &labels)?
    } else {
        metrics::auc_macro_ovr(&scores, &labels, m)?
    };
    Ok(auc)
}

/// Report of one self-training pipeline: a model fit on the labeled slice,
/// the audit of the pseudo-labels it produced, and the final model trained
/// on the combined slice under the configured mode.
#[derive(Debug, Clone)]
pub struct SelfTrainReport {
    pub labeled_phase: TrainingReport,
    pub combined_phase: TrainingReport,
    pub pseudo_label_purity: Option<f64>,
    pub labeled_count: usize,
    pub pseudo_count: usize,
}

/// Self-training: fit on a labeled fraction of the pool, pseudo-label an
/// equal-size disjoint slice by argmax, then train on the union treating
/// pseudo-labels as observed. Pool labels on the pseudo slice are used only
/// to audit pseudo-label purity. Slices are drawn by a seeded shuffle of the
/// pool; the final phase retrains from a fresh seeded initialization.
pub fn self_train(
    config: &TrainConfig,
    labeled_fraction: f64,
    pool: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<SelfTrainReport, TrainError> {
    if labeled_fraction.is_nan() || labeled_fraction <= 0.0 || labeled_fraction >= 1.0 {
        return Err(TrainError::Config(format!(
            "labeled_fraction {labeled_fraction} outside (0, 1)"
        )));
    }
    config.validate()?;
    let n = pool.len();
    let n_labeled = ((labeled_fraction * n as f64).floor() as usize).max(1);
    let n_pseudo = n_labeled.min(n - n_labeled);

    let mut slice_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut slice_rng);
    let mut labeled_pos = positions[..n_labeled].to_vec();
    let mut pseudo_pos = positions[n_labeled..n_labeled + n_pseudo].to_vec();
    labeled_pos.sort_unstable();
    pseudo_pos.sort_unstable();

    let subset = |pos: &[usize]| -> Result<Dataset, TrainError> {
        let samples: Vec<Sample> = pos.iter().map(|&p| pool.sample(p).clone()).collect();
        Ok(Dataset::new(
            samples,
            pool.label_space().clone(),
            pool.feature_dim(),
        )?)
    };

    let labeled = subset(&labeled_pos)?;
    let phase1_config = TrainConfig {
        mode: TrainMode::Default,
        ..config.clone()
    };
    let phase1 = train(&phase1_config, &labeled, val_set, test_set)?;

    if n_pseudo == 0 {
        // Labeled slice covers the whole pool: nothing to pseudo-label.
        let combined = train(config, &labeled, val_set, test_set)?;
        return Ok(SelfTrainReport {
            labeled_phase: phase1,
            combined_phase: combined,
            pseudo_label_purity: None,
            labeled_count: n_labeled,
            pseudo_count: 0,
        });
    }

    let mut pseudo_samples = Vec::with_capacity(n_pseudo);
    let mut pseudo_hits = 0usize;
    let mut pseudo_audited = true;
    for &pos in &pseudo_pos {
        let original = pool.sample(pos);
        let probs = phase1.params.forward(&original.features)?;
        let pseudo_label = argmax(&probs);
        // The pool's own label is hidden from training; keep the truth for
        // the audit column.
        let truth = original.truth_label.or(Some(original.observed_label));
        match truth {
            Some(t) if t == pseudo_label => pseudo_hits += 1,
            Some(_) => {}
            None => pseudo_audited = false,
        }
        pseudo_samples.push(Sample {
            id: original.id,
            features: original.features.clone(),
            observed_label: pseudo_label,
            truth_label: truth,
        });
    }
    let pseudo_label_purity =
        pseudo_audited.then(|| pseudo_hits as f64 / pseudo_samples.len() as f64);

    let mut combined_samples: Vec<Sample> = labeled.samples().to_vec();
    combined_samples.extend(pseudo_samples);
    combined_samples.sort_by_key(|s| s.id);
    let combined_set = Dataset::new(
        combined_samples,
        pool.label_space().clone(),
        pool.feature_dim(),
    )?;
    let combined = train(config, &combined_set, val_set, test_set)?;

    Ok(SelfTrainReport {
        labeled_phase: phase1,
        combined_phase: combined,
        pseudo_label_purity,
        labeled_count: n_labeled,
        pseudo_count: n_pseudo,
    })
}
