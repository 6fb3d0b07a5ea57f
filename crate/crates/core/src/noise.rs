//! Label-noise construction: row-stochastic transition matrices and seeded
//! injection of label flips into a dataset.
//!
//! Injection redraws every observed label from the matrix row of its current
//! value, so a label survives with the diagonal probability and the flip log
//! records only actual changes. Draws use a ChaCha8 stream seeded by the
//! caller and visit samples in dataset order, which makes flip logs
//! reproducible byte for byte.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Dataset, Sample};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("matrix is {matrix}x{matrix} but dataset has {dataset} classes")]
    DimensionMismatch { matrix: usize, dataset: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("entry ({row},{col}) = {value} outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
}

/// Row-stochastic M x M matrix; entry (i, j) is the probability that true
/// label `i` is observed as label `j`.
#[derive(Debug, Clone)]
pub struct NoiseTransitionMatrix {
    entries: Vec<f64>, // row-major
    num_classes: usize,
    noise_rate: f64,
}

impl NoiseTransitionMatrix {
    /// Symmetric noise: diagonal `1 - gamma`, off-diagonal `gamma / (M - 1)`.
    pub fn symmetric(num_classes: usize, gamma: f64) -> Result<Self, NoiseError> {
        if num_classes < 2 {
            return Err(NoiseError::TooFewClasses(num_classes));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(NoiseError::InvalidRate(gamma));
        }
        let off = gamma / (num_classes - 1) as f64;
        let mut entries = vec![off; num_classes * num_classes];
        for i in 0..num_classes {
            entries[i * num_classes + i] = 1.0 - gamma;
        }
        Ok(Self {
            entries,
            num_classes,
            noise_rate: gamma,
        })
    }

    /// General row-stochastic matrix. `noise_rate` is taken as the mean
    /// off-diagonal mass, recorded for reporting only.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, NoiseError> {
        let m = rows.len();
        if m < 2 {
            return Err(NoiseError::TooFewClasses(m));
        }
        let mut entries = Vec::with_capacity(m * m);
        let mut off_mass = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(NoiseError::DimensionMismatch {
                    matrix: m,
                    dataset: row.len(),
                });
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(NoiseError::EntryOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
                if i != j {
                    off_mass += v;
                }
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(NoiseError::RowNotStochastic { row: i, sum });
            }
            entries.extend_from_slice(row);
        }
        Ok(Self {
            entries,
            num_classes: m,
            noise_rate: off_mass / m as f64,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.num_classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Plain text table, one row per line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for i in 0..self.num_classes {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    fn draw(&self, from: usize, u: f64) -> usize {
        let row = self.row(from);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.num_classes - 1
    }
}

/// One recorded label change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipRecord {
    pub id: usize,
    pub old_label: usize,
    pub new_label: usize,
}

/// Redraws every observed label from its matrix row. Truth labels are set to
/// the pre-injection observed labels where absent, so the result is always
/// auditable. Returns the noisy dataset and the log of actual changes.
pub fn inject(
    dataset: &Dataset,
    matrix: &NoiseTransitionMatrix,
    seed: u64,
) -> Result<(Dataset, Vec<FlipRecord>), NoiseError> {
    if matrix.num_classes() != dataset.num_classes() {
        return Err(NoiseError::DimensionMismatch {
            matrix: matrix.num_classes(),
            dataset: dataset.num_classes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flips = Vec::new();
    let samples: Vec<Sample> = dataset
        .samples()
        .iter()
        .map(|s| {
            let u: f64 = rng.gen();
            let new_label = matrix.draw(s.observed_label, u);
            if new_label != s.observed_label {
                flips.push(FlipRecord {
                    id: s.id,
                    old_label: s.observed_label,
                    new_label,
                });
            }
            Sample {
                id: s.id,
                features: s.features.clone(),
                observed_label: new_label,
                truth_label: s.truth_label.or(Some(s.observed_label)),
            }
        })
        .collect();
    let noisy = Dataset::new(samples, dataset.label_space().clone(), dataset.feature_dim())
        .expect("relabeling preserves dataset validity");
    Ok((noisy, flips))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussians, GaussianMixtureSpec};

    #[test]
    fn symmetric_zero_noise_is_identity() {
        let m = NoiseTransitionMatrix::symmetric(2, 0.0).unwrap();
        assert_eq!(m.entry(0, 0), 1.0);
        assert_eq!(m.entry(0, 1), 0.0);
        assert_eq!(m.entry(1, 0), 0.0);
        assert_eq!(m.entry(1, 1), 1.0);
    }

    #[test]
    fn symmetric_two_class() {
        let m = NoiseTransitionMatrix::symmetric(2, 0.4).unwrap();
        assert!((m.entry(0, 0) - 0.6).abs() < 1e-15);
        assert!((m.entry(0, 1) - 0.4).abs() < 1e-15);
        assert!((m.entry(1, 0) - 0.4).abs() < 1e-15);
        assert!((m.entry(1, 1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn symmetric_five_class_off_diagonal() {
        let m = NoiseTransitionMatrix::symmetric(5, 0.4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!((m.entry(i, j) - 0.1).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn symmetric_rejects_bad_args() {
        assert!(NoiseTransitionMatrix::symmetric(1, 0.1).is_err());
        assert!(NoiseTransitionMatrix::symmetric(3, 1.5).is_err());
        assert!(NoiseTransitionMatrix::symmetric(3, -0.1).is_err());
    }

    #[test]
    fn inject_zero_noise_is_identity() {
        let ds = synth_gaussians(&GaussianMixtureSpec::two_cluster(), 50, 1).unwrap();
        let m = NoiseTransitionMatrix::symmetric(2, 0.0).unwrap();
        let (noisy, flips) = inject(&ds, &m, 9).unwrap();
        assert!(flips.is_empty());
        assert_eq!(noisy.observed_labels(), ds.observed_labels());
    }

    #[test]
    fn inject_flip_fraction_within_binomial_bound() {
        let ds = synth_gaussians(&GaussianMixtureSpec::two_cluster(), 2500, 2).unwrap();
        let n = ds.len() as f64; // 5000
        let gamma = 0.2;
        let m = NoiseTransitionMatrix::symmetric(2, gamma).unwrap();
        let (_, flips) = inject(&ds, &m, 77).unwrap();
        let fraction = flips.len() as f64 / n;
        let sigma = (gamma * (1.0 - gamma) / n).sqrt();
        assert!(
            (fraction - gamma).abs() <= 3.0 * sigma,
            "flip fraction {fraction} outside {gamma} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn inject_is_deterministic_and_logs_exact_changes() {
        let ds = synth_gaussians(&GaussianMixtureSpec::pentagon(4.0), 200, 3).unwrap();
        let m = NoiseTransitionMatrix::symmetric(5, 0.3).unwrap();
        let (noisy_a, flips_a) = inject(&ds, &m, 5).unwrap();
        let (noisy_b, flips_b) = inject(&ds, &m, 5).unwrap();
        assert_eq!(flips_a, flips_b);
        assert_eq!(noisy_a.observed_labels(), noisy_b.observed_labels());

        let changed: Vec<usize> = ds
            .samples()
            .iter()
            .zip(noisy_a.samples())
            .filter(|(before, after)| before.observed_label != after.observed_label)
            .map(|(before, _)| before.id)
            .collect();
        let logged: Vec<usize> = flips_a.iter().map(|f| f.id).collect();
        assert_eq!(changed, logged);
    }

    #[test]
    fn inject_sets_truth_labels_when_absent() {
        let mut body = String::from("f0,label\n");
        for i in 0..20 {
            body.push_str(&format!("{i},{}\n", i % 2));
        }
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        let ds = Dataset::load_csv(f.path(), crate::data::LabelSpace::new(2).unwrap()).unwrap();
        assert!(!ds.has_truth_labels());

        let m = NoiseTransitionMatrix::symmetric(2, 0.5).unwrap();
        let (noisy, _) = inject(&ds, &m, 4).unwrap();
        assert!(noisy.has_truth_labels());
        for (before, after) in ds.samples().iter().zip(noisy.samples()) {
            assert_eq!(after.truth_label, Some(before.observed_label));
        }
    }

    #[test]
    fn inject_rejects_dimension_mismatch() {
        let ds = synth_gaussians(&GaussianMixtureSpec::two_cluster(), 10, 0).unwrap();
        let m = NoiseTransitionMatrix::symmetric(3, 0.1).unwrap();
        assert!(inject(&ds, &m, 0).is_err());
    }
}
