//! Linear warm-up followed by cosine annealing.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn new(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_steps,
            total_steps,
        }
    }

    /// Learning rate at an integer optimizer step in `[0, total_steps)`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        Ok(self.lr_at_position(step as f64))
    }

    /// The same curve at a real-valued position, for continuity checks.
    pub fn lr_at_position(&self, pos: f64) -> f64 {
        let warmup = self.warmup_steps as f64;
        if pos < warmup {
            return self.base_lr * pos / warmup;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = if span > 0.0 { (pos - warmup) / span } else { 0.0 };
        self.base_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Free-function form of [`WarmupCosine::lr_at`].
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> Result<f64> {
    WarmupCosine::new(base_lr, warmup_steps, total_steps).lr_at(step)
}
