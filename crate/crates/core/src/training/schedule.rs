//! Cosine annealing with warm restarts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosineRestarts {
    /// Length of the first cycle in optimizer updates.
    pub initial_period: usize,
    /// Each cycle is this many times longer than the previous one.
    pub period_mult: usize,
    /// Floor of the schedule as a fraction of the base rate.
    pub min_lr_ratio: f64,
}

impl Default for CosineRestarts {
    fn default() -> Self {
        CosineRestarts {
            initial_period: 500,
            period_mult: 2,
            min_lr_ratio: 0.01,
        }
    }
}

impl CosineRestarts {
    pub fn validate(&self) -> Result<()> {
        if self.initial_period == 0 || self.period_mult == 0 {
            return Err(Error::invalid("schedule period and multiplier must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::invalid(format!(
                "min_lr_ratio {} outside [0, 1]",
                self.min_lr_ratio
            )));
        }
        Ok(())
    }

    /// `(position within cycle, cycle length)` for update `step`.
    pub fn cycle(&self, step: usize) -> (usize, usize) {
        let mut start = 0;
        let mut period = self.initial_period;
        while step >= start + period {
            start += period;
            period *= self.period_mult;
        }
        (step - start, period)
    }

    /// Learning rate at update `step` (0-based).
    pub fn lr(&self, base_lr: f64, step: usize) -> f64 {
        let (pos, period) = self.cycle(step);
        let min = base_lr * self.min_lr_ratio;
        let phase = std::f64::consts::PI * pos as f64 / period as f64;
        min + 0.5 * (base_lr - min) * (1.0 + phase.cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restarts_at_cycle_boundaries() {
        let s = CosineRestarts::default();
        assert_eq!(s.lr(1.0, 0), 1.0);
        assert!((s.lr(1.0, 250) - 0.505).abs() < 1e-12);
        assert!(s.lr(1.0, 499) < 0.011);
        assert_eq!(s.lr(1.0, 500), 1.0);
        assert_eq!(s.cycle(1499), (999, 1000));
        assert_eq!(s.cycle(1500), (0, 2000));
    }
}
