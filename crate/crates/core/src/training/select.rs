//! Checkpoint selection and early stopping on validation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the lowest validation loss; ties keep the earliest entry.
pub fn select_checkpoint(history: &[(usize, f64)]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::invalid("cannot select a checkpoint from an empty history"));
    }
    let mut best = 0;
    for (i, &(_, loss)) in history.iter().enumerate() {
        if loss < history[best].1 {
            best = i;
        }
    }
    Ok(best)
}

/// Counts evaluations without improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_improvement: 0,
        }
    }

    /// Records one validation loss and reports whether it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.best {
            Some(b) if loss >= b => {
                self.since_improvement += 1;
                false
            }
            _ => {
                self.best = Some(loss);
                self.since_improvement = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}
