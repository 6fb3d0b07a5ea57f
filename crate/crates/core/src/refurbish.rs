//! Refurbished-label selection: exponential time weights, the weighted-mean
//! likelihood over a sample's prediction window, the Bayesian posterior over
//! candidate labels, and the MAP label choice.
//!
//! For a sample with a full window of `T` past probability vectors, the
//! candidate label `j` gets likelihood `sum_i w_i * p_i[j]` where position
//! `i = 1` is the oldest window entry and `i = T` the newest, and the weights
//! `w_i = exp(i / eta) / Z'` grow with `i` so recent epochs dominate. The
//! posterior multiplies this likelihood by the current model's softmax output
//! for the sample (the prior) and normalizes. The refurbished label is the
//! posterior argmax, ties broken toward the lowest class index.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::history::{argmax, PredictionWindow};

#[derive(Debug, Error)]
pub enum RefurbishError {
    #[error("window width must be >= 1, got {0}")]
    ZeroWidth(usize),
    #[error("eta must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("weights have length {weights} but window holds {window} entries")]
    LengthMismatch { weights: usize, window: usize },
    #[error("window for sample {0} is not full")]
    WindowNotFull(usize),
    #[error("prior is not a probability vector: {0}")]
    BadPrior(String),
    #[error("likelihood has length {found}, expected {expected}")]
    BadLikelihood { expected: usize, found: usize },
    #[error("all prior-weighted likelihoods vanish; no refurbishment possible")]
    ZeroEvidence,
}

/// How a past epoch's prediction counts as evidence for a candidate label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMode {
    /// Use the stored softmax probability of the candidate class.
    SoftProbability,
    /// Use 1 when the stored argmax equals the candidate class, else 0.
    HardIndicator,
}

/// Normalized, strictly increasing time weights over window positions.
#[derive(Debug, Clone)]
pub struct WeightVector {
    weights: Vec<f64>,
    eta: Option<f64>,
}

impl WeightVector {
    /// `w_i = exp(i / eta) / Z'` for `i = 1..=len`, computed with the
    /// largest exponent factored out so extreme `eta` stays finite.
    pub fn exponential(len: usize, eta: f64) -> Result<Self, RefurbishError> {
        if len == 0 {
            return Err(RefurbishError::ZeroWidth(len));
        }
        if eta.is_nan() || eta <= 0.0 {
            return Err(RefurbishError::NonPositiveEta(eta));
        }
        let raw: Vec<f64> = (1..=len)
            .map(|i| ((i as f64 - len as f64) / eta).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            weights: raw.into_iter().map(|w| w / total).collect(),
            eta: Some(eta),
        })
    }

    /// Equal weights; the large-eta limit used by the uniform-vote ablation.
    pub fn uniform(len: usize) -> Result<Self, RefurbishError> {
        if len == 0 {
            return Err(RefurbishError::ZeroWidth(len));
        }
        Ok(Self {
            weights: vec![1.0 / len as f64; len],
            eta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    /// Weight of window position `i` counted from 1 = oldest.
    pub fn at(&self, position: usize) -> f64 {
        self.weights[position - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted-mean evidence for each candidate class accumulated over a full
/// window, oldest entry first.
pub fn likelihood(
    window: &PredictionWindow,
    weights: &WeightVector,
    mode: EvidenceMode,
) -> Result<Vec<f64>, RefurbishError> {
    if !window.is_full() {
        return Err(RefurbishError::WindowNotFull(window.sample_id()));
    }
    if weights.len() != window.len() {
        return Err(RefurbishError::LengthMismatch {
            weights: weights.len(),
            window: window.len(),
        });
    }
    let m = window
        .entries()
        .next()
        .map(|e| e.probs.len())
        .unwrap_or(0);
    let mut lik = vec![0.0; m];
    for (pos, entry) in window.entries().enumerate() {
        let w = weights.as_slice()[pos];
        match mode {
            EvidenceMode::SoftProbability => {
                for (j, &p) in entry.probs.iter().enumerate() {
                    lik[j] += w * p;
                }
            }
            EvidenceMode::HardIndicator => {
                lik[entry.predicted_label()] += w;
            }
        }
    }
    Ok(lik)
}

/// Bayes rule over candidate labels: `post_j = prior_j * lik_j / Z`. Errors
/// with [`RefurbishError::ZeroEvidence`] when `Z` vanishes.
pub fn posterior(prior: &[f64], lik: &[f64]) -> Result<Vec<f64>, RefurbishError> {
    if prior.len() != lik.len() {
        return Err(RefurbishError::BadLikelihood {
            expected: prior.len(),
            found: lik.len(),
        });
    }
    let sum: f64 = prior.iter().sum();
    if prior.iter().any(|&p| !p.is_finite() || p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(RefurbishError::BadPrior(format!(
            "components must be nonnegative and sum to 1, got sum {sum}"
        )));
    }
    let mut post: Vec<f64> = prior.iter().zip(lik).map(|(&p, &l)| p * l).collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Err(RefurbishError::ZeroEvidence);
    }
    for v in &mut post {
        *v /= z;
    }
    Ok(post)
}

/// A sample's current refurbished label with its posterior and the epoch the
/// assignment was made.
#[derive(Debug, Clone, PartialEq)]
pub struct RefurbishedLabel {
    pub label: usize,
    pub posterior: Vec<f64>,
    pub epoch_assigned: usize,
}

/// The persistent set of refurbished samples. Membership never shrinks;
/// re-refurbishing a member overwrites its label and posterior.
#[derive(Debug, Clone, Default)]
pub struct RefurbishedSet {
    entries: BTreeMap<usize, RefurbishedLabel>,
}

impl RefurbishedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, sample_id: usize) -> bool {
        self.entries.contains_key(&sample_id)
    }

    pub fn get(&self, sample_id: usize) -> Option<&RefurbishedLabel> {
        self.entries.get(&sample_id)
    }

    pub fn insert(
        &mut self,
        sample_id: usize,
        label: usize,
        posterior: Vec<f64>,
        epoch_assigned: usize,
    ) {
        self.entries.insert(
            sample_id,
            RefurbishedLabel {
                label,
                posterior,
                epoch_assigned,
            },
        );
    }

    /// Iterate in ascending sample-id order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &RefurbishedLabel)> {
        self.entries.iter().map(|(&id, entry)| (id, entry))
    }
}

/// Computes the posterior for one sample from its window and the model's
/// current softmax output, stores the MAP label in `psi`, and returns it.
/// On zero evidence the set is left untouched and the error is surfaced so
/// the caller can skip the sample for this epoch.
pub fn refurbish(
    sample_id: usize,
    window: &PredictionWindow,
    prior: &[f64],
    weights: &WeightVector,
    mode: EvidenceMode,
    epoch: usize,
    psi: &mut RefurbishedSet,
) -> Result<(usize, Vec<f64>), RefurbishError> {
    let lik = likelihood(window, weights, mode)?;
    let post = posterior(prior, &lik)?;
    let label = argmax(&post);
    psi.insert(sample_id, label, post.clone(), epoch);
    Ok((label, post))
}
