//! Dataset representation, CSV ingestion, synthetic generation, and splitting.
//!
//! The interchange format is a plain CSV file with a header row: feature
//! columns `f0..f{d-1}`, a `label` column, and an optional `truth_label`
//! column. Features are `f64` and are written with the shortest decimal
//! representation that round-trips, so write-then-read reproduces a dataset
//! bit for bit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("row {row}: expected {expected} features, found {found}")]
    InconsistentFeatureDim {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class_names length {names} does not match {num_classes} classes")]
    ClassNamesMismatch { names: usize, num_classes: usize },
    #[error("duplicate sample id {0}")]
    DuplicateId(usize),
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("split produced an empty {0} partition")]
    EmptySplit(&'static str),
    #[error("dataset is empty")]
    Empty,
}

/// The set of class indices `0..M` a dataset's labels live in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(num_classes: usize) -> Result<Self, DataError> {
        if num_classes < 2 {
            return Err(DataError::TooFewClasses(num_classes));
        }
        Ok(Self {
            num_classes,
            class_names: None,
        })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self, DataError> {
        let mut space = Self::new(names.len())?;
        space.class_names = Some(names);
        Ok(space)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }
}

/// One indexed training example. `truth_label` is audit-only: it is never
/// consulted by training code, only by purity/kappa style metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub observed_label: usize,
    pub truth_label: Option<usize>,
}

/// An ordered collection of samples sharing one feature dimensionality and
/// label space. Freshly loaded or generated datasets have dense ids
/// `0..N-1`; datasets produced by [`split`] keep their parent's ids so that
/// the three parts form a partition of the original.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    label_space: LabelSpace,
    feature_dim: usize,
}

impl Dataset {
    /// Validates ids (unique), labels (in range) and feature dims (uniform).
    pub fn new(
        samples: Vec<Sample>,
        label_space: LabelSpace,
        feature_dim: usize,
    ) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::Empty);
        }
        let mut seen = BTreeSet::new();
        for (row, s) in samples.iter().enumerate() {
            if !seen.insert(s.id) {
                return Err(DataError::DuplicateId(s.id));
            }
            if s.features.len() != feature_dim {
                return Err(DataError::InconsistentFeatureDim {
                    row,
                    expected: feature_dim,
                    found: s.features.len(),
                });
            }
            if s.observed_label >= label_space.num_classes() {
                return Err(DataError::LabelOutOfRange {
                    row,
                    label: s.observed_label as i64,
                    num_classes: label_space.num_classes(),
                });
            }
            if let Some(t) = s.truth_label {
                if t >= label_space.num_classes() {
                    return Err(DataError::LabelOutOfRange {
                        row,
                        label: t as i64,
                        num_classes: label_space.num_classes(),
                    });
                }
            }
        }
        Ok(Self {
            samples,
            label_space,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Sample at a position in iteration order (not necessarily its id).
    pub fn sample(&self, pos: usize) -> &Sample {
        &self.samples[pos]
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// True when every sample carries a truth label.
    pub fn has_truth_labels(&self) -> bool {
        self.samples.iter().all(|s| s.truth_label.is_some())
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    pub fn truth_labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.truth_label).collect()
    }

    /// Loads the interchange CSV. Ids are assigned by row order.
    pub fn load_csv(path: impl AsRef<Path>, label_space: LabelSpace) -> Result<Self, DataError> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => DataError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e.to_string()),
                },
                _ => DataError::Csv(e),
            })?;

        let headers = reader.headers()?.clone();
        let mut feature_cols = Vec::new();
        let mut label_col = None;
        let mut truth_col = None;
        for (idx, name) in headers.iter().enumerate() {
            if name == "label" {
                label_col = Some(idx);
            } else if name == "truth_label" {
                truth_col = Some(idx);
            } else if let Some(rest) = name.strip_prefix('f') {
                if let Ok(k) = rest.parse::<usize>() {
                    feature_cols.push((k, idx));
                }
            }
        }
        let label_col = label_col.ok_or_else(|| DataError::MissingColumn("label".into()))?;
        if feature_cols.is_empty() {
            return Err(DataError::MissingColumn("f0".into()));
        }
        feature_cols.sort_unstable();
        for (k, (declared, _)) in feature_cols.iter().enumerate() {
            if *declared != k {
                return Err(DataError::MissingColumn(format!("f{k}")));
            }
        }
        let feature_dim = feature_cols.len();
        let expected_cols = headers.len();

        let mut samples = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2; // 1-based, after the header
            let record = record?;
            if record.len() != expected_cols {
                return Err(DataError::MalformedRow {
                    row,
                    message: format!(
                        "expected {expected_cols} columns, found {}",
                        record.len()
                    ),
                });
            }
            let mut features = Vec::with_capacity(feature_dim);
            for &(_, col) in &feature_cols {
                let text = &record[col];
                let v: f64 = text.parse().map_err(|_| DataError::MalformedRow {
                    row,
                    message: format!("feature {text:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::MalformedRow {
                        row,
                        message: format!("feature {text:?} is not finite"),
                    });
                }
                features.push(v);
            }
            let observed_label =
                parse_label(&record[label_col], row, label_space.num_classes())?;
            let truth_label = match truth_col {
                Some(col) => {
                    let text = record[col].trim();
                    if text.is_empty() {
                        None
                    } else {
                        Some(parse_label(text, row, label_space.num_classes())?)
                    }
                }
                None => None,
            };
            samples.push(Sample {
                id: samples.len(),
                features,
                observed_label,
                truth_label,
            });
        }
        Dataset::new(samples, label_space, feature_dim)
    }

    /// Writes the interchange CSV. The `truth_label` column is emitted only
    /// when at least one sample has a truth label.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let bytes = self.to_csv_string().into_bytes();
        crate::report::atomic_write(path, &bytes).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let with_truth = self.samples.iter().any(|s| s.truth_label.is_some());
        let mut out = String::new();
        for d in 0..self.feature_dim {
            if d > 0 {
                out.push(',');
            }
            let _ = write!(out, "f{d}");
        }
        out.push_str(",label");
        if with_truth {
            out.push_str(",truth_label");
        }
        out.push('\n');
        for s in &self.samples {
            for (d, v) in s.features.iter().enumerate() {
                if d > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            let _ = write!(out, ",{}", s.observed_label);
            if with_truth {
                out.push(',');
                if let Some(t) = s.truth_label {
                    let _ = write!(out, "{t}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn parse_label(text: &str, row: usize, num_classes: usize) -> Result<usize, DataError> {
    let value: i64 = text.trim().parse().map_err(|_| DataError::MalformedRow {
        row,
        message: format!("label {text:?} is not an integer"),
    })?;
    if value < 0 || value as usize >= num_classes {
        return Err(DataError::LabelOutOfRange {
            row,
            label: value,
            num_classes,
        });
    }
    Ok(value as usize)
}

/// Per-class Gaussian blobs with a shared isotropic standard deviation.
#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    pub class_means: Vec<Vec<f64>>,
    pub std_dev: f64,
}

impl GaussianMixtureSpec {
    /// Two classes centered at (-2, 0) and (+2, 0) with unit deviation.
    pub fn two_cluster() -> Self {
        Self {
            class_means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            std_dev: 1.0,
        }
    }

    /// Five classes on a pentagon of the given radius, unit deviation.
    pub fn pentagon(radius: f64) -> Self {
        let class_means = (0..5)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                vec![radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        Self {
            class_means,
            std_dev: 1.0,
        }
    }
}

/// Draws `n_per_class` samples around each class mean. Labels are clean:
/// `observed_label == truth_label` for every sample, so data purity is 1
/// until noise is injected. Deterministic for a given seed (ChaCha8 stream,
/// class-major then sample-major then coordinate-major draw order).
pub fn synth_gaussians(
    spec: &GaussianMixtureSpec,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if spec.class_means.len() < 2 {
        return Err(DataError::TooFewClasses(spec.class_means.len()));
    }
    if spec.std_dev.is_nan() || spec.std_dev <= 0.0 {
        return Err(DataError::DegenerateSpec(format!(
            "standard deviation must be positive, got {}",
            spec.std_dev
        )));
    }
    if n_per_class == 0 {
        return Err(DataError::DegenerateSpec("n_per_class must be >= 1".into()));
    }
    let dim = spec.class_means[0].len();
    if dim == 0 || spec.class_means.iter().any(|m| m.len() != dim) {
        return Err(DataError::DegenerateSpec(
            "class means must share a nonzero dimensionality".into(),
        ));
    }

    let label_space = LabelSpace::new(spec.class_means.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.std_dev).expect("std_dev checked above");
    let mut samples = Vec::with_capacity(spec.class_means.len() * n_per_class);
    for (class, mean) in spec.class_means.iter().enumerate() {
        for _ in 0..n_per_class {
            let features = mean
                .iter()
                .map(|&mu| mu + normal.sample(&mut rng))
                .collect();
            samples.push(Sample {
                id: samples.len(),
                features,
                observed_label: class,
                truth_label: Some(class),
            });
        }
    }
    Dataset::new(samples, label_space, dim)
}

/// Fractions for a train/validation/test partition plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(
        train_fraction: f64,
        val_fraction: f64,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        for (name, f) in [
            ("train", train_fraction),
            ("val", val_fraction),
            ("test", test_fraction),
        ] {
            if f.is_nan() || f <= 0.0 || f >= 1.0 {
                return Err(DataError::InvalidSplit(format!(
                    "{name} fraction {f} not in (0, 1)"
                )));
            }
        }
        let sum = train_fraction + val_fraction + test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            train_fraction,
            val_fraction,
            test_fraction,
            seed,
        })
    }
}

/// Partitions a dataset into train/validation/test. The parts are disjoint,
/// their union is the input, and sample ids are preserved. Stratifies by
/// observed label when every class has at least 3 samples, otherwise falls
/// back to a plain shuffled split. Deterministic per seed.
pub fn split(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    if dataset.len() < 3 {
        return Err(DataError::InvalidSplit(format!(
            "need at least 3 samples to split, got {}",
            dataset.len()
        )));
    }
    let m = dataset.num_classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (pos, s) in dataset.samples().iter().enumerate() {
        per_class[s.observed_label].push(pos);
    }
    let stratify = per_class.iter().all(|c| c.is_empty() || c.len() >= 3)
        && per_class.iter().filter(|c| !c.is_empty()).count() >= 1;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_pos = Vec::new();
    let mut val_pos = Vec::new();
    let mut test_pos = Vec::new();

    let mut assign = |positions: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        positions.shuffle(rng);
        let n = positions.len();
        let b1 = (spec.train_fraction * n as f64).round() as usize;
        let b2 = ((spec.train_fraction + spec.val_fraction) * n as f64).round() as usize;
        let b1 = b1.min(n);
        let b2 = b2.clamp(b1, n);
        train_pos.extend_from_slice(&positions[..b1]);
        val_pos.extend_from_slice(&positions[b1..b2]);
        test_pos.extend_from_slice(&positions[b2..]);
    };

    if stratify {
        for class_positions in per_class.iter_mut() {
            if !class_positions.is_empty() {
                assign(class_positions, &mut rng);
            }
        }
    } else {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        assign(&mut all, &mut rng);
    }

    let take = |mut positions: Vec<usize>, name: &'static str| -> Result<Dataset, DataError> {
        if positions.is_empty() {
            return Err(DataError::EmptySplit(name));
        }
        positions.sort_unstable();
        let samples = positions
            .into_iter()
            .map(|pos| dataset.sample(pos).clone())
            .collect();
        Ok(Dataset {
            samples,
            label_space: dataset.label_space.clone(),
            feature_dim: dataset.feature_dim,
        })
    };

    Ok((
        take(train_pos, "train")?,
        take(val_pos, "val")?,
        take(test_pos, "test")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny_csv(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_four_rows() {
        let f = tiny_csv("f0,f1,label\n0.5,1.5,0\n-1,2,1\n3,4,0\n0.25,0.125,1\n");
        let ds = Dataset::load_csv(f.path(), LabelSpace::new(2).unwrap()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.sample(1).features, vec![-1.0, 2.0]);
        assert_eq!(ds.sample(3).observed_label, 1);
        assert!(ds.sample(0).truth_label.is_none());
    }

    #[test]
    fn load_csv_label_out_of_range_names_row() {
        let f = tiny_csv("f0,label\n1.0,0\n2.0,5\n");
        let err = Dataset::load_csv(f.path(), LabelSpace::new(2).unwrap()).unwrap_err();
        match err {
            DataError::LabelOutOfRange { row, label, .. } => {
                assert_eq!(row, 3);
                assert_eq!(label, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_non_finite_features() {
        let f = tiny_csv("f0,label\n1.0,0\n1e400,1\n");
        let err = Dataset::load_csv(f.path(), LabelSpace::new(2).unwrap()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn load_csv_ragged_row_reports_position() {
        let f = tiny_csv("f0,f1,label\n1,2,0\n1,0\n");
        let err = Dataset::load_csv(f.path(), LabelSpace::new(2).unwrap()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains('3') || text.contains("row"), "{text}");
    }

    #[test]
    fn load_csv_referral_shaped_manifest() {
        // 550 rows of class 0 and 380 of class 1, mirroring a two-class
        // referral manifest.
        let mut body = String::from("f0,label\n");
        for i in 0..550 {
            body.push_str(&format!("{}.5,0\n", i));
        }
        for i in 0..380 {
            body.push_str(&format!("-{}.25,1\n", i));
        }
        let f = tiny_csv(&body);
        let ds = Dataset::load_csv(f.path(), LabelSpace::new(2).unwrap()).unwrap();
        assert_eq!(ds.len(), 930);
    }

    #[test]
    fn synth_is_deterministic_and_clean() {
        let spec = GaussianMixtureSpec::two_cluster();
        let a = synth_gaussians(&spec, 100, 7).unwrap();
        let b = synth_gaussians(&spec, 100, 7).unwrap();
        assert_eq!(a.len(), 200);
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x, y);
        }
        assert!(a
            .samples()
            .iter()
            .all(|s| s.truth_label == Some(s.observed_label)));
    }

    #[test]
    fn synth_rejects_bad_spec() {
        let spec = GaussianMixtureSpec {
            class_means: vec![vec![0.0], vec![0.0]],
            std_dev: 0.0,
        };
        assert!(synth_gaussians(&spec, 10, 0).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = GaussianMixtureSpec::two_cluster();
        let ds = synth_gaussians(&spec, 5, 3).unwrap(); // N = 10
        let split_spec = SplitSpec::new(0.6, 0.2, 0.2, 99).unwrap();
        let (tr, va, te) = split(&ds, &split_spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));

        let (tr2, va2, te2) = split(&ds, &split_spec).unwrap();
        assert_eq!(tr.observed_labels(), tr2.observed_labels());
        assert_eq!(
            va.samples().iter().map(|s| s.id).collect::<Vec<_>>(),
            va2.samples().iter().map(|s| s.id).collect::<Vec<_>>()
        );
        assert_eq!(te.len(), te2.len());
    }

    #[test]
    fn split_is_a_partition() {
        let ds = synth_gaussians(&GaussianMixtureSpec::pentagon(4.0), 20, 5).unwrap();
        let spec = SplitSpec::new(0.7, 0.15, 0.15, 1).unwrap();
        let (tr, va, te) = split(&ds, &spec).unwrap();
        let mut ids = BTreeSet::new();
        for part in [&tr, &va, &te] {
            for s in part.samples() {
                assert!(ids.insert(s.id), "id {} appears twice", s.id);
            }
        }
        assert_eq!(ids.len(), ds.len());
        assert_eq!(*ids.iter().next_back().unwrap(), ds.len() - 1);
    }

    #[test]
    fn stratified_split_balances_classes() {
        let ds = synth_gaussians(&GaussianMixtureSpec::two_cluster(), 100, 11).unwrap();
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 4).unwrap();
        let (tr, va, te) = split(&ds, &spec).unwrap();
        for part in [&tr, &va, &te] {
            let ones = part
                .samples()
                .iter()
                .filter(|s| s.observed_label == 1)
                .count();
            let zeros = part.len() - ones;
            assert!(
                (ones as i64 - zeros as i64).abs() <= 1,
                "unbalanced: {zeros} vs {ones}"
            );
        }
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let ds = synth_gaussians(&GaussianMixtureSpec::two_cluster(), 50, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        ds.write_csv(&path).unwrap();
        let back = Dataset::load_csv(&path, ds.label_space().clone()).unwrap();
        assert_eq!(ds.len(), back.len());
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.observed_label, b.observed_label);
            assert_eq!(a.truth_label, b.truth_label);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn split_rejects_tiny_input() {
        let samples = vec![
            Sample {
                id: 0,
                features: vec![0.0],
                observed_label: 0,
                truth_label: None,
            },
            Sample {
                id: 1,
                features: vec![1.0],
                observed_label: 1,
                truth_label: None,
            },
        ];
        let ds = Dataset::new(samples, LabelSpace::new(2).unwrap(), 1).unwrap();
        let spec = SplitSpec::new(0.5, 0.25, 0.25, 0).unwrap();
        assert!(split(&ds, &spec).is_err());
    }
}
