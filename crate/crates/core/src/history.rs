//! Per-sample record of recent predicted probability vectors and the
//! entropy-based predictive-uncertainty gate.
//!
//! Each sample owns a ring buffer of its last `T` softmax outputs, one per
//! epoch. Uncertainty is the Shannon entropy of the empirical distribution
//! of argmax labels over the window, normalized by `ln M` so thresholds are
//! comparable across class counts. The gate stays inactive until a window
//! holds exactly `T` entries.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::data::LabelSpace;
use crate::refurbish::RefurbishedSet;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("probability vector has length {found}, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("probability vector invalid: {0}")]
    BadProbabilities(String),
    #[error("epoch {epoch} not greater than last recorded epoch {last} for sample {sample_id}")]
    NonMonotonicEpoch {
        sample_id: usize,
        epoch: usize,
        last: usize,
    },
    #[error("window for sample {0} is not full yet")]
    WindowNotFull(usize),
    #[error("no history for sample {0}")]
    UnknownSample(usize),
    #[error("window capacity must be >= 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone)]
pub struct WindowEntry {
    pub epoch: usize,
    pub probs: Vec<f64>,
}

impl WindowEntry {
    /// Argmax with lowest-index tie-break, matching the refurbisher.
    pub fn predicted_label(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Ring buffer of the last `capacity` (epoch, probability vector) pairs for
/// one sample, ordered oldest to newest.
#[derive(Debug, Clone)]
pub struct PredictionWindow {
    sample_id: usize,
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl PredictionWindow {
    fn new(sample_id: usize, capacity: usize) -> Self {
        Self {
            sample_id,
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn sample_id(&self) -> usize {
        self.sample_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Entries oldest to newest.
    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    fn push(&mut self, epoch: usize, probs: Vec<f64>) -> Result<(), HistoryError> {
        if let Some(last) = self.entries.back() {
            if epoch <= last.epoch {
                return Err(HistoryError::NonMonotonicEpoch {
                    sample_id: self.sample_id,
                    epoch,
                    last: last.epoch,
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(WindowEntry { epoch, probs });
        Ok(())
    }
}

/// All prediction windows for a training set, keyed by sample id.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    windows: BTreeMap<usize, PredictionWindow>,
    capacity: usize,
    label_space: LabelSpace,
}

impl HistoryStore {
    pub fn new(capacity: usize, label_space: LabelSpace) -> Result<Self, HistoryError> {
        if capacity == 0 {
            return Err(HistoryError::ZeroCapacity);
        }
        Ok(Self {
            windows: BTreeMap::new(),
            capacity,
            label_space,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn window(&self, sample_id: usize) -> Option<&PredictionWindow> {
        self.windows.get(&sample_id)
    }

    /// Appends one epoch's probability vector to a sample's window,
    /// renormalizing input that sums to 1 within 1e-6. The oldest entry is
    /// evicted once the window holds `capacity` epochs.
    pub fn record(
        &mut self,
        sample_id: usize,
        epoch: usize,
        probs: &[f64],
    ) -> Result<(), HistoryError> {
        let m = self.label_space.num_classes();
        if probs.len() != m {
            return Err(HistoryError::WrongLength {
                expected: m,
                found: probs.len(),
            });
        }
        let mut sum = 0.0;
        for &p in probs {
            if !p.is_finite() || p < 0.0 {
                return Err(HistoryError::BadProbabilities(format!(
                    "component {p} is negative or non-finite"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(HistoryError::BadProbabilities(format!(
                "vector sums to {sum}, expected 1 within 1e-6"
            )));
        }
        let normalized: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        self.windows
            .entry(sample_id)
            .or_insert_with(|| PredictionWindow::new(sample_id, self.capacity))
            .push(epoch, normalized)
    }

    /// Normalized entropy of the argmax-label distribution over a full
    /// window: 0 when every epoch predicted the same class, 1 when the
    /// predictions spread uniformly over all M classes. Errors while the
    /// window is short of `capacity` entries.
    pub fn predictive_uncertainty(&self, sample_id: usize) -> Result<f64, HistoryError> {
        let window = self
            .windows
            .get(&sample_id)
            .ok_or(HistoryError::UnknownSample(sample_id))?;
        if !window.is_full() {
            return Err(HistoryError::WindowNotFull(sample_id));
        }
        let m = self.label_space.num_classes();
        let mut counts = vec![0usize; m];
        for entry in window.entries() {
            counts[entry.predicted_label()] += 1;
        }
        let t = window.len() as f64;
        let mut entropy = 0.0;
        for &c in &counts {
            if c > 0 {
                let p = c as f64 / t;
                entropy -= p * p.ln();
            }
        }
        Ok(entropy / (m as f64).ln())
    }

    /// A sample may be refurbished when its predictions are consistent
    /// (full window with uncertainty at or below `epsilon`) or when it has
    /// been refurbished before.
    pub fn is_refurbishable(
        &self,
        sample_id: usize,
        epsilon: f64,
        psi: &RefurbishedSet,
    ) -> bool {
        if psi.contains(sample_id) {
            return true;
        }
        match self.predictive_uncertainty(sample_id) {
            Ok(u) => u <= epsilon,
            Err(_) => false,
        }
    }

    /// Debug dump: one CSV row per stored entry,
    /// `sample_id,epoch,p_0..p_{M-1}`, ids ascending then epochs ascending.
    pub fn dump_csv(&self) -> String {
        let m = self.label_space.num_classes();
        let mut out = String::from("sample_id,epoch");
        for j in 0..m {
            let _ = write!(out, ",p_{j}");
        }
        out.push('\n');
        for (id, window) in &self.windows {
            for entry in window.entries() {
                let _ = write!(out, "{id},{}", entry.epoch);
                for p in &entry.probs {
                    let _ = write!(out, ",{p}");
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(t: usize, m: usize) -> HistoryStore {
        HistoryStore::new(t, LabelSpace::new(m).unwrap()).unwrap()
    }

    fn one_hot(m: usize, class: usize) -> Vec<f64> {
        let mut v = vec![0.0; m];
        v[class] = 1.0;
        v
    }

    #[test]
    fn ring_buffer_keeps_latest_epochs() {
        let mut s = store(3, 2);
        for epoch in 1..=5 {
            s.record(7, epoch, &one_hot(2, 0)).unwrap();
        }
        let window = s.window(7).unwrap();
        let epochs: Vec<usize> = window.entries().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![3, 4, 5]);
        assert!(window.is_full());
    }

    #[test]
    fn record_renormalizes_within_tolerance() {
        let mut s = store(2, 2);
        s.record(0, 1, &[0.499999, 0.5]).unwrap(); // sums to 0.999999
        let entry = s.window(0).unwrap().entries().next().unwrap();
        let sum: f64 = entry.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn record_rejects_stale_epoch_and_bad_vectors() {
        let mut s = store(3, 2);
        s.record(0, 5, &one_hot(2, 1)).unwrap();
        assert!(matches!(
            s.record(0, 4, &one_hot(2, 1)),
            Err(HistoryError::NonMonotonicEpoch { .. })
        ));
        assert!(matches!(
            s.record(0, 6, &[0.5, 0.5, 0.0]),
            Err(HistoryError::WrongLength { .. })
        ));
        assert!(s.record(0, 6, &[0.9, 0.2]).is_err());
        assert!(s.record(0, 6, &[-0.1, 1.1]).is_err());
    }

    #[test]
    fn uncertainty_zero_when_unanimous() {
        let mut s = store(4, 3);
        for epoch in 1..=4 {
            s.record(1, epoch, &[0.1, 0.7, 0.2]).unwrap();
        }
        assert_eq!(s.predictive_uncertainty(1).unwrap(), 0.0);
    }

    #[test]
    fn uncertainty_one_when_spread_over_all_classes() {
        let mut s = store(3, 3);
        for (epoch, class) in [(1, 0), (2, 1), (3, 2)] {
            s.record(0, epoch, &one_hot(3, class)).unwrap();
        }
        let u = s.predictive_uncertainty(0).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_matches_direct_entropy_evaluation() {
        // T=5, M=2, predicted labels (0,0,0,1,1):
        // -(0.6 ln 0.6 + 0.4 ln 0.4) / ln 2 = 0.970950...
        let mut s = store(5, 2);
        for (epoch, class) in [(1, 0), (2, 0), (3, 0), (4, 1), (5, 1)] {
            s.record(0, epoch, &one_hot(2, class)).unwrap();
        }
        let u = s.predictive_uncertainty(0).unwrap();
        let expected = -(0.6f64 * 0.6f64.ln() + 0.4 * 0.4f64.ln()) / 2f64.ln();
        assert!((u - expected).abs() < 1e-12);
        assert!((u - 0.9710).abs() < 1e-4);
    }

    #[test]
    fn uncertainty_needs_full_window() {
        let mut s = store(3, 2);
        s.record(0, 1, &one_hot(2, 0)).unwrap();
        s.record(0, 2, &one_hot(2, 0)).unwrap();
        assert!(matches!(
            s.predictive_uncertainty(0),
            Err(HistoryError::WindowNotFull(0))
        ));
        assert!(matches!(
            s.predictive_uncertainty(42),
            Err(HistoryError::UnknownSample(42))
        ));
    }

    #[test]
    fn gate_honors_threshold_and_membership() {
        let mut s = store(5, 2);
        let mut psi = RefurbishedSet::new();
        // unanimous sample 0, mixed sample 1
        for epoch in 1..=5 {
            s.record(0, epoch, &one_hot(2, 0)).unwrap();
            let class = if epoch <= 3 { 0 } else { 1 };
            s.record(1, epoch, &one_hot(2, class)).unwrap();
        }
        assert!(s.is_refurbishable(0, 0.4, &psi)); // uncertainty 0.0
        assert!(!s.is_refurbishable(1, 0.4, &psi)); // uncertainty ~0.971
        psi.insert(1, 0, vec![0.8, 0.2], 6);
        assert!(s.is_refurbishable(1, 0.4, &psi)); // membership overrides
        assert!(!s.is_refurbishable(9, 0.4, &psi)); // unseen sample -> not gateable
    }

    #[test]
    fn uncertainty_is_permutation_invariant() {
        // Relabeling classes by a permutation must not change the value.
        let mut a = store(4, 3);
        let mut b = store(4, 3);
        let labels = [0usize, 2, 0, 1];
        let perm = [2usize, 0, 1];
        for (epoch, &class) in labels.iter().enumerate() {
            a.record(0, epoch + 1, &one_hot(3, class)).unwrap();
            b.record(0, epoch + 1, &one_hot(3, perm[class])).unwrap();
        }
        let ua = a.predictive_uncertainty(0).unwrap();
        let ub = b.predictive_uncertainty(0).unwrap();
        assert!((ua - ub).abs() < 1e-15);
    }

    #[test]
    fn dump_csv_lists_entries_in_order() {
        let mut s = store(2, 2);
        s.record(1, 1, &[0.25, 0.75]).unwrap();
        s.record(0, 1, &[0.5, 0.5]).unwrap();
        s.record(0, 2, &[0.125, 0.875]).unwrap();
        let dump = s.dump_csv();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines[0], "sample_id,epoch,p_0,p_1");
        assert_eq!(lines[1], "0,1,0.5,0.5");
        assert_eq!(lines[2], "0,2,0.125,0.875");
        assert_eq!(lines[3], "1,1,0.25,0.75");
    }
}
