//! Launch decision for label refurbishment: warm-up accounting, the
//! validation-loss band `[L_a, ln M]`, and the validation-accuracy threshold
//! `1 - gamma - phi`. Once both prerequisites hold at the same epoch the
//! monitor latches on for the rest of training.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("relaxation factor {0} outside [-0.1, 0.1]")]
    RelaxationOutOfRange(f64),
    #[error("noise rate {0} outside [0, 1)")]
    InvalidNoiseRate(f64),
    #[error("loss lower bound {lower} not below upper bound {upper}")]
    EmptyLossBand { lower: f64, upper: f64 },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("epoch {epoch} not greater than last checked epoch {last}")]
    NonMonotonicEpoch { epoch: usize, last: usize },
    #[error("validation loss {0} is negative or non-finite")]
    InvalidLoss(f64),
    #[error("validation accuracy {0} outside [0, 1]")]
    InvalidAccuracy(f64),
}

/// Upper end of the launch loss band: the cross-entropy of the least
/// confident still-correct prediction, `-ln(1/M) = ln M`.
pub fn l_upper(num_classes: usize) -> Result<f64, StartupError> {
    if num_classes < 2 {
        return Err(StartupError::TooFewClasses(num_classes));
    }
    Ok((num_classes as f64).ln())
}

#[derive(Debug, Clone, Copy)]
pub struct StartupConfig {
    /// Warm-up length `n`; the mechanism never activates at epochs <= n.
    pub warmup_epochs: usize,
    /// Relaxation factor `phi` in [-0.1, 0.1] loosening or tightening the
    /// accuracy threshold.
    pub relaxation_factor: f64,
    /// Lower end `L_a` of the loss band; 0 in the ideal case.
    pub loss_lower: f64,
    /// Assumed noise rate `gamma` of the training labels.
    pub noise_rate: f64,
}

impl Default for StartupConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 10,
            relaxation_factor: 0.0,
            loss_lower: 0.0,
            noise_rate: 0.0,
        }
    }
}

impl StartupConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), StartupError> {
        if !(-0.1..=0.1).contains(&self.relaxation_factor) {
            return Err(StartupError::RelaxationOutOfRange(self.relaxation_factor));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(StartupError::InvalidNoiseRate(self.noise_rate));
        }
        let upper = l_upper(num_classes)?;
        if self.loss_lower.is_nan() || self.loss_lower < 0.0 || self.loss_lower >= upper {
            return Err(StartupError::EmptyLossBand {
                lower: self.loss_lower,
                upper,
            });
        }
        Ok(())
    }

    /// Non-fatal configuration smells, e.g. a vacuous accuracy threshold.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.noise_rate + self.relaxation_factor >= 1.0 {
            out.push(format!(
                "gamma + phi = {} >= 1: the accuracy condition is always satisfied",
                self.noise_rate + self.relaxation_factor
            ));
        }
        out
    }

    /// Accuracy the validation set must strictly exceed: `1 - gamma - phi`.
    pub fn accuracy_threshold(&self) -> f64 {
        1.0 - self.noise_rate - self.relaxation_factor
    }
}

/// Single-rising-edge latch fed once per epoch with validation metrics.
#[derive(Debug, Clone)]
pub struct StartupMonitor {
    config: StartupConfig,
    loss_upper: f64,
    triggered: bool,
    trigger_epoch: Option<usize>,
    last_epoch: Option<usize>,
}

impl StartupMonitor {
    pub fn new(config: StartupConfig, num_classes: usize) -> Result<Self, StartupError> {
        config.validate(num_classes)?;
        Ok(Self {
            config,
            loss_upper: l_upper(num_classes)?,
            triggered: false,
            trigger_epoch: None,
            last_epoch: None,
        })
    }

    pub fn config(&self) -> &StartupConfig {
        &self.config
    }

    pub fn is_triggered(&self) -> bool {
        self.triggered
    }

    pub fn trigger_epoch(&self) -> Option<usize> {
        self.trigger_epoch
    }

    /// Returns whether the mechanism is active for this epoch. Triggers when
    /// the epoch is past warm-up, the validation loss sits inside
    /// `[L_a, ln M]`, and the validation accuracy strictly exceeds
    /// `1 - gamma - phi`; stays true forever after. Epochs must strictly
    /// increase across calls.
    pub fn check(
        &mut self,
        epoch: usize,
        val_loss: f64,
        val_acc: f64,
    ) -> Result<bool, StartupError> {
        if let Some(last) = self.last_epoch {
            if epoch <= last {
                return Err(StartupError::NonMonotonicEpoch { epoch, last });
            }
        }
        self.last_epoch = Some(epoch);
        if !val_loss.is_finite() || val_loss < 0.0 {
            return Err(StartupError::InvalidLoss(val_loss));
        }
        if !(0.0..=1.0).contains(&val_acc) {
            return Err(StartupError::InvalidAccuracy(val_acc));
        }
        if self.triggered {
            return Ok(true);
        }
        if epoch > self.config.warmup_epochs
            && val_loss >= self.config.loss_lower
            && val_loss <= self.loss_upper
            && val_acc > self.config.accuracy_threshold()
        {
            self.triggered = true;
            self.trigger_epoch = Some(epoch);
        }
        Ok(self.triggered)
    }
}
