//! Evaluation and audit metrics: data purity, Cohen's kappa, accuracy,
//! rank-based AUC, and confusion matrices.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("sample {0} lacks a truth label")]
    MissingTruth(usize),
    #[error("no current label for sample {0}")]
    MissingLabel(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("scores must not contain NaN")]
    NonFiniteScore,
}

/// Fraction of samples whose current label (original or refurbished) equals
/// the ground truth. `current` must cover every sample id.
pub fn data_purity(
    dataset: &Dataset,
    current: &BTreeMap<usize, usize>,
) -> Result<f64, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut matches = 0usize;
    for s in dataset.samples() {
        let truth = s.truth_label.ok_or(MetricsError::MissingTruth(s.id))?;
        let label = *current.get(&s.id).ok_or(MetricsError::MissingLabel(s.id))?;
        if label == truth {
            matches += 1;
        }
    }
    Ok(matches as f64 / dataset.len() as f64)
}

/// Chance-corrected agreement between two label sequences. When chance
/// agreement is exactly 1 (both marginals degenerate), returns 1.0 for
/// identical sequences and 0.0 otherwise.
pub fn cohen_kappa(a: &[usize], b: &[usize], num_classes: usize) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as f64;
    let mut marg_a = vec![0usize; num_classes];
    let mut marg_b = vec![0usize; num_classes];
    let mut agree = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        for label in [x, y] {
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange {
                    label,
                    num_classes,
                });
            }
        }
        marg_a[x] += 1;
        marg_b[y] += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .zip(&marg_b)
        .map(|(&ca, &cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if agree == a.len() { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Fraction of positions where the two sequences agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Rank-based (Mann-Whitney) AUC with midrank handling of ties. `labels`
/// must be 0/1; `scores` are positive-class scores.
pub fn auc_binary(scores: &[f64], labels: &[usize]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Midranks over tied score groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro average of one-vs-rest AUCs. `scores[i]` is the length-M score
/// vector for sample `i`; class `c`'s AUC uses column `c` against the
/// indicator `labels == c`. Classes absent from `labels` are skipped.
pub fn auc_macro_ovr(
    scores: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    let mut classes_seen = 0usize;
    for c in 0..num_classes {
        let indicator: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
        let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        match auc_binary(&column, &indicator) {
            Ok(auc) => {
                total += auc;
                classes_seen += 1;
            }
            Err(MetricsError::SingleClass) => continue,
            Err(e) => return Err(e),
        }
    }
    if classes_seen == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(total / classes_seen as f64)
}

/// M x M counts; entry (i, j) is the number of samples with reference label
/// `i` and compared label `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<usize>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, reference: usize, compared: usize) -> usize {
        self.counts[reference * self.num_classes + compared]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, reference: usize) -> usize {
        (0..self.num_classes)
            .map(|j| self.count(reference, j))
            .sum()
    }

    /// Rows normalized to sum to 1; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes)
            .map(|i| {
                let total = self.row_sum(i);
                (0..self.num_classes)
                    .map(|j| {
                        if total == 0 {
                            0.0
                        } else {
                            self.count(i, j) as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

impl std::fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.num_classes {
            for j in 0..self.num_classes {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.count(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn confusion(
    reference: &[usize],
    compared: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if reference.len() != compared.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), compared.len()));
    }
    let mut counts = vec![0usize; num_classes * num_classes];
    for (&r, &c) in reference.iter().zip(compared) {
        for label in [r, c] {
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange {
                    label,
                    num_classes,
                });
            }
        }
        counts[r * num_classes + c] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        num_classes,
    })
}
