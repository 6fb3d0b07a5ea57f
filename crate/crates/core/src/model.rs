//! Minimal differentiable classifiers (softmax-linear and one-hidden-layer
//! MLP with rectifier units), cross-entropy loss, analytic gradients, and
//! SGD/Adam parameter updates. Everything is `f64` and all parameters live
//! in one flat vector so the optimizer and finite-difference checks treat
//! both architectures uniformly.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature vector has length {found}, expected {expected}")]
    FeatureDimMismatch { expected: usize, found: usize },
    #[error("non-finite value in input features")]
    NonFiniteInput,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("gradient has length {found}, expected {expected}")]
    GradientShapeMismatch { expected: usize, found: usize },
    #[error("non-finite gradient component")]
    NonFiniteGradient,
    #[error("parameters became non-finite after an update")]
    NonFiniteParams,
    #[error("empty batch")]
    EmptyBatch,
    #[error("hidden layer needs at least 1 unit")]
    ZeroHidden,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    SoftmaxLinear,
    MlpOneHidden { hidden_units: usize },
}

/// All weights and biases of one classifier packed into a single vector.
///
/// Softmax-linear layout: `[W (M x d, row-major), b (M)]`.
/// MLP layout: `[W1 (h x d), b1 (h), W2 (M x h), b2 (M)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    values: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: each weight matrix is uniform on `(-s, s)`
    /// with `s = sqrt(6 / (fan_in + fan_out))`, biases zero. Matrices are
    /// drawn row-major, first layer first.
    pub fn init<R: Rng>(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if let Architecture::MlpOneHidden { hidden_units: 0 } = arch {
            return Err(ModelError::ZeroHidden);
        }
        let mut values = Vec::new();
        let mut draw_matrix = |rows: usize, cols: usize, values: &mut Vec<f64>| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            for _ in 0..rows * cols {
                values.push(rng.gen::<f64>() * 2.0 * s - s);
            }
        };
        match arch {
            Architecture::SoftmaxLinear => {
                draw_matrix(num_classes, input_dim, &mut values);
                values.resize(values.len() + num_classes, 0.0);
            }
            Architecture::MlpOneHidden { hidden_units } => {
                draw_matrix(hidden_units, input_dim, &mut values);
                values.resize(values.len() + hidden_units, 0.0);
                draw_matrix(num_classes, hidden_units, &mut values);
                values.resize(values.len() + num_classes, 0.0);
            }
        }
        Ok(Self {
            arch,
            input_dim,
            num_classes,
            values,
        })
    }

    /// All-zero parameters; useful for tests (softmax of zeros is uniform).
    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let len = match arch {
            Architecture::SoftmaxLinear => num_classes * input_dim + num_classes,
            Architecture::MlpOneHidden { hidden_units } => {
                hidden_units * input_dim + hidden_units + num_classes * hidden_units + num_classes
            }
        };
        Self {
            arch,
            input_dim,
            num_classes,
            values: vec![0.0; len],
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let m = self.num_classes;
        match self.arch {
            Architecture::SoftmaxLinear => {
                let (w, b) = self.values.split_at(m * d);
                (0..m)
                    .map(|c| {
                        b[c] + w[c * d..(c + 1) * d]
                            .iter()
                            .zip(features)
                            .map(|(wi, xi)| wi * xi)
                            .sum::<f64>()
                    })
                    .collect()
            }
            Architecture::MlpOneHidden { hidden_units: h } => {
                let hidden = self.hidden_activations(features);
                let w2 = &self.values[h * d + h..h * d + h + m * h];
                let b2 = &self.values[h * d + h + m * h..];
                (0..m)
                    .map(|c| {
                        b2[c] + w2[c * h..(c + 1) * h]
                            .iter()
                            .zip(&hidden)
                            .map(|(wi, ai)| wi * ai)
                            .sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    fn hidden_activations(&self, features: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let Architecture::MlpOneHidden { hidden_units: h } = self.arch else {
            return Vec::new();
        };
        let w1 = &self.values[..h * d];
        let b1 = &self.values[h * d..h * d + h];
        (0..h)
            .map(|k| {
                let pre = b1[k]
                    + w1[k * d..(k + 1) * d]
                        .iter()
                        .zip(features)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>();
                pre.max(0.0)
            })
            .collect()
    }

    /// Softmax probabilities for one feature vector, computed with the
    /// max-subtraction stabilization so huge logits cannot overflow.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.input_dim {
            return Err(ModelError::FeatureDimMismatch {
                expected: self.input_dim,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(softmax(&self.logits(features)))
    }

    /// Analytic gradient of the mean cross-entropy over the batch, packed
    /// in the same layout as the parameters.
    pub fn grad(&self, batch: &[(&[f64], usize)]) -> Result<Vec<f64>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let d = self.input_dim;
        let m = self.num_classes;
        let mut grad = vec![0.0; self.values.len()];
        for &(features, label) in batch {
            if label >= m {
                return Err(ModelError::LabelOutOfRange {
                    label,
                    num_classes: m,
                });
            }
            let probs = self.forward(features)?;
            match self.arch {
                Architecture::SoftmaxLinear => {
                    let (gw, gb) = grad.split_at_mut(m * d);
                    for c in 0..m {
                        let delta = probs[c] - if c == label { 1.0 } else { 0.0 };
                        for (j, &x) in features.iter().enumerate() {
                            gw[c * d + j] += delta * x;
                        }
                        gb[c] += delta;
                    }
                }
                Architecture::MlpOneHidden { hidden_units: h } => {
                    let hidden = self.hidden_activations(features);
                    let w2 = &self.values[h * d + h..h * d + h + m * h];
                    let mut delta_hidden = vec![0.0; h];
                    for c in 0..m {
                        let delta = probs[c] - if c == label { 1.0 } else { 0.0 };
                        for k in 0..h {
                            grad[h * d + h + c * h + k] += delta * hidden[k];
                            delta_hidden[k] += delta * w2[c * h + k];
                        }
                        grad[h * d + h + m * h + c] += delta;
                    }
                    for k in 0..h {
                        // rectifier gate: gradient flows only through
                        // active units
                        if hidden[k] > 0.0 {
                            for (j, &x) in features.iter().enumerate() {
                                grad[k * d + j] += delta_hidden[k] * x;
                            }
                            grad[h * d + k] += delta_hidden[k];
                        }
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        Ok(grad)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a probability vector against an integer label, with the
/// probability clamped at 1e-12 so the loss stays finite.
pub fn xent_loss(probs: &[f64], label: usize) -> Result<f64, ModelError> {
    if label >= probs.len() {
        return Err(ModelError::LabelOutOfRange {
            label,
            num_classes: probs.len(),
        });
    }
    Ok(-probs[label].max(1e-12).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with its per-parameter state. Adam keeps bias-corrected first
/// and second moment estimates shaped like the parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_len: usize) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; param_len], vec![0.0; param_len]),
        };
        Self {
            kind,
            learning_rate,
            step_count: 0,
            first_moment: m,
            second_moment: v,
        }
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One parameter update in place. SGD: `theta -= alpha * g`. Adam:
    /// moment updates with bias correction, then
    /// `theta -= alpha * m_hat / (sqrt(v_hat) + epsilon)`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) -> Result<(), ModelError> {
        if grad.len() != params.len() {
            return Err(ModelError::GradientShapeMismatch {
                expected: params.len(),
                found: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient);
        }
        self.step_count += 1;
        let alpha = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.values_mut().iter_mut().zip(grad) {
                    *p -= alpha * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step_count as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (i, (p, &g)) in params.values_mut().iter_mut().zip(grad).enumerate() {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= alpha * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        if !params.is_finite() {
            return Err(ModelError::NonFiniteParams);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let params = ModelParams::zeros(Architecture::SoftmaxLinear, 3, 4);
        let probs = params.forward(&[0.7, -1.2, 3.0]).unwrap();
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut params = ModelParams::zeros(Architecture::SoftmaxLinear, 1, 2);
        // W = [[1000], [0]], b = 0 -> logits (1000, 0) for x = 1
        params.values_mut()[0] = 1000.0;
        let probs = params.forward(&[1.0]).unwrap();
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs[0] - 1.0).abs() < 1e-12);
        assert!(probs[1] < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for arch in [
            Architecture::SoftmaxLinear,
            Architecture::MlpOneHidden { hidden_units: 5 },
        ] {
            let params = ModelParams::init(arch, 4, 3, &mut rng).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let probs = params.forward(&x).unwrap();
                let sum: f64 = probs.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(probs.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let params = ModelParams::zeros(Architecture::SoftmaxLinear, 2, 2);
        assert!(matches!(
            params.forward(&[1.0]),
            Err(ModelError::FeatureDimMismatch { .. })
        ));
        assert!(matches!(
            params.forward(&[f64::NAN, 0.0]),
            Err(ModelError::NonFiniteInput)
        ));
    }

    #[test]
    fn xent_values() {
        assert_eq!(xent_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        let l = xent_loss(&[0.5, 0.5], 0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let l = xent_loss(&[0.1, 0.9], 0).unwrap();
        assert!((l - 2.302585092994046).abs() < 1e-12);
        assert!(xent_loss(&[0.5, 0.5], 2).is_err());
        // clamped rather than infinite
        assert!(xent_loss(&[0.0, 1.0], 0).unwrap().is_finite());
    }

    #[test]
    fn gradient_vanishes_for_perfect_predictions() {
        let mut params = ModelParams::zeros(Architecture::SoftmaxLinear, 1, 2);
        params.values_mut()[0] = 500.0; // class 0 overwhelmingly likely for x > 0
        params.values_mut()[1] = -500.0;
        let x = [1.0];
        let batch: Vec<(&[f64], usize)> = vec![(&x, 0)];
        let grad = params.grad(&batch).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-9), "{grad:?}");
    }

    #[test]
    fn gradient_is_mean_invariant_under_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params =
            ModelParams::init(Architecture::MlpOneHidden { hidden_units: 4 }, 3, 2, &mut rng)
                .unwrap();
        let a = [0.3, -0.4, 1.1];
        let b = [2.0, 0.1, -0.7];
        let batch: Vec<(&[f64], usize)> = vec![(&a, 0), (&b, 1)];
        let doubled: Vec<(&[f64], usize)> = vec![(&a, 0), (&b, 1), (&a, 0), (&b, 1)];
        let g1 = params.grad(&batch).unwrap();
        let g2 = params.grad(&doubled).unwrap();
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for arch in [
            Architecture::SoftmaxLinear,
            Architecture::MlpOneHidden { hidden_units: 6 },
        ] {
            let params = ModelParams::init(arch, 3, 3, &mut rng).unwrap();
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let labels = [0usize, 2, 1, 0];
            let batch: Vec<(&[f64], usize)> = xs
                .iter()
                .zip(labels)
                .map(|(x, l)| (x.as_slice(), l))
                .collect();
            let analytic = params.grad(&batch).unwrap();

            let loss_at = |p: &ModelParams| -> f64 {
                batch
                    .iter()
                    .map(|&(x, l)| xent_loss(&p.forward(x).unwrap(), l).unwrap())
                    .sum::<f64>()
                    / batch.len() as f64
            };
            let h = 1e-6;
            for i in 0..params.len() {
                let mut plus = params.clone();
                plus.values_mut()[i] += h;
                let mut minus = params.clone();
                minus.values_mut()[i] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs());
                let diff = (analytic[i] - numeric).abs();
                assert!(
                    diff <= 1e-9 || diff / denom < 1e-5,
                    "coord {i}: analytic {} vs numeric {numeric}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut params = ModelParams::zeros(Architecture::SoftmaxLinear, 1, 2);
        params.values_mut()[0] = 1.0;
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, params.len());
        let mut grad = vec![0.0; params.len()];
        grad[0] = 2.0;
        opt.step(&mut params, &grad).unwrap();
        assert!((params.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ModelParams::init(Architecture::SoftmaxLinear, 2, 2, &mut rng).unwrap();
        let before = params.values().to_vec();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.5, params.len());
        opt.step(&mut params, &before.iter().map(|_| 0.0).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(params.values(), before.as_slice());
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        // With bias correction the first step moves by
        // alpha * c / (c + eps) regardless of |c|.
        for c in [1e-3, 1.0, 1e3] {
            let mut params = ModelParams::zeros(Architecture::SoftmaxLinear, 1, 2);
            let alpha = 0.01;
            let mut opt = OptimizerState::new(OptimizerKind::adam_default(), alpha, params.len());
            let mut grad = vec![0.0; params.len()];
            grad[0] = c;
            opt.step(&mut params, &grad).unwrap();
            let moved = -params.values()[0];
            assert!(
                moved > alpha * (1.0 - 1e-4) && moved <= alpha,
                "c={c}: moved {moved}"
            );
            // untouched coordinates stay put
            assert_eq!(params.values()[1], 0.0);
        }
    }

    #[test]
    fn step_rejects_bad_gradients() {
        let mut params = ModelParams::zeros(Architecture::SoftmaxLinear, 1, 2);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, params.len());
        assert!(matches!(
            opt.step(&mut params, &[0.0]),
            Err(ModelError::GradientShapeMismatch { .. })
        ));
        let mut grad = vec![0.0; params.len()];
        grad[1] = f64::NAN;
        assert!(matches!(
            opt.step(&mut params, &grad),
            Err(ModelError::NonFiniteGradient)
        ));
    }
}
