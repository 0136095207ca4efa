//! Forecast windows: `T` past steps followed by `H` target steps.

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageSequence, StationSeries, STEPS_PER_DAY};
use crate::error::{Error, Result};

/// Number of windows of span `past + horizon` over `len` steps.
pub fn window_count(len: usize, past: usize, horizon: usize, stride: usize) -> usize {
    let span = past + horizon;
    if stride == 0 || len < span {
        0
    } else {
        (len - span) / stride + 1
    }
}

/// Start indices of every complete window over the common time axis.
pub fn make_windows(
    series: &[StationSeries],
    images: Option<&ImageSequence>,
    past: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::invalid("window stride must be positive"));
    }
    let first = series.first().ok_or_else(|| Error::invalid("no station series"))?;
    let (start, len) = (first.start, first.steps());
    for s in series {
        if s.start != start || s.steps() != len {
            return Err(Error::invalid(format!(
                "series {} is not aligned with {}: starts {} ({} steps) vs {} ({} steps)",
                s.node_id,
                first.node_id,
                s.start,
                s.steps(),
                start,
                len
            )));
        }
    }
    if let Some(img) = images {
        if img.start != start || img.len() != len {
            return Err(Error::invalid(format!(
                "images start {} ({} frames), series start {} ({} steps)",
                img.start,
                img.len(),
                start,
                len
            )));
        }
    }
    Ok((0..window_count(len, past, horizon, stride))
        .map(|k| k * stride)
        .collect())
}

/// Starts of windows on the `stride` grid whose targets fall entirely
/// inside steps `targets`; past steps may precede it.
pub fn windows_for_targets(targets: std::ops::Range<usize>, past: usize, horizon: usize, stride: usize) -> Vec<usize> {
    if stride == 0 {
        return Vec::new();
    }
    let lo = targets.start.saturating_sub(past);
    let first = lo.div_ceil(stride) * stride;
    (first..)
        .step_by(stride)
        .take_while(|&s| s + past + horizon <= targets.end)
        .collect()
}

/// Chronological split by whole days: training days, then validation days
/// carved from the end of the training span, then evaluation days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub eval_days: usize,
    /// Fraction of the non-evaluation days held out for checkpoint
    /// selection, rounded to whole days (at least one).
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            eval_days: 6,
            val_fraction: 0.1,
        }
    }
}

/// Step ranges of the three target spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub eval: std::ops::Range<usize>,
}

impl SplitConfig {
    pub fn split(&self, ds: &Dataset) -> Result<Split> {
        let days = ds.days();
        if self.eval_days >= days {
            return Err(Error::invalid(format!(
                "{} evaluation days leave nothing to train on in a {days}-day dataset",
                self.eval_days
            )));
        }
        let fit_days = days - self.eval_days;
        let val_days = ((self.val_fraction * fit_days as f64).round() as usize).max(1);
        if val_days >= fit_days {
            return Err(Error::invalid(format!(
                "validation takes {val_days} of {fit_days} non-evaluation days"
            )));
        }
        let d = STEPS_PER_DAY;
        Ok(Split {
            train: 0..(fit_days - val_days) * d,
            val: (fit_days - val_days) * d..fit_days * d,
            eval: fit_days * d..days * d,
        })
    }
}
