use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::Task;

/// Optimization hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Side of the LQ training patch.
    pub patch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fractions of `iterations` at which the rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Validate (and log, and checkpoint) every this many steps.
    pub val_every: usize,
    pub seed: u64,
    /// `None` picks L1 for super-resolution and Charbonnier otherwise.
    pub loss: Option<LossConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            patch_size: 24,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            milestones: vec![0.5, 0.75, 0.9],
            lr_decay: 0.5,
            val_every: 100,
            seed: 0,
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.val_every == 0 {
            return bad("batch_size, patch_size and val_every must be positive".into());
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("milestones must be fractions in [0, 1]".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if let Some(l) = &self.loss {
            l.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Learning rate in effect for 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| step >= (m * self.iterations as f64).floor() as usize)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn loss_for(&self, task: Task) -> LossConfig {
        self.loss.unwrap_or(match task {
            Task::Sr => LossConfig::L1,
            Task::Denoise | Task::Car => LossConfig::charbonnier(),
        })
    }
}
