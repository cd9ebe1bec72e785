use crate::error::{Error, Result};

/// Linear warmup to `base_rate`, then inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    base_rate: f64,
    warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(base_rate: f64, warmup_steps: u64) -> Result<Self> {
        if base_rate.is_nan() || base_rate <= 0.0 {
            return Err(Error::arg(format!("base learning rate {base_rate} must be > 0")));
        }
        if warmup_steps == 0 {
            return Err(Error::arg("warmup_steps must be >= 1"));
        }
        Ok(LrSchedule {
            base_rate,
            warmup_steps,
        })
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_steps
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_rate: 5e-4,
            warmup_steps: 4000,
        }
    }
}

/// Learning rate for 1-based update number `step`.
pub fn lr_at(step: u64, schedule: &LrSchedule) -> Result<f64> {
    if step == 0 {
        return Err(Error::arg("lr_at: steps are 1-based"));
    }
    let warmup = schedule.warmup_steps as f64;
    let s = step as f64;
    Ok(if step <= schedule.warmup_steps {
        schedule.base_rate * (s / warmup)
    } else {
        schedule.base_rate * (warmup / s).sqrt()
    })
}
