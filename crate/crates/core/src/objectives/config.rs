use crate::error::{Error, Result};

/// Hyperparameters of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Focal weight α.
    pub alpha: f64,
    /// Focal exponent γ.
    pub gamma: f64,
    /// InfoNCE temperature τ.
    pub tau: f64,
    /// Weight λ1 of the contrastive term.
    pub lambda: f64,
    /// Negatives sampled per clicked candidate.
    pub negatives: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.25,
            gamma: 2.0,
            tau: 0.1,
            lambda: 0.1,
            negatives: 4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.negatives == 0 {
            return Err(Error::config(
                "at least one negative per positive is required",
            ));
        }
        Ok(())
    }
}
