use serde::{Deserialize, Serialize};

/// Cosine annealing from `lr_max` at step 0 down to `lr_min` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Self {
        Self {
            lr_max,
            lr_min,
            total_steps,
        }
    }

    /// Learning rate at `step`. Steps past the end are clamped to `lr_min`.
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr_min;
        }
        let step = if step > self.total_steps {
            log::warn!(
                "cosine schedule step {step} beyond total {}; clamping",
                self.total_steps
            );
            self.total_steps
        } else {
            step
        };
        let progress = step as f64 / self.total_steps as f64;
        self.lr_min
            + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
