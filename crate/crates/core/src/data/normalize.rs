//! Conversion between physical units and model units.
//!
//! GHI is divided by [`GHI_SCALE`]; every other feature is standardized with
//! statistics from the training range.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::GHI_SCALE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_names: Vec<String>,
    /// Per-feature offset; 0 for GHI.
    pub mean: Vec<f64>,
    /// Per-feature scale; [`GHI_SCALE`] for GHI.
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over steps `range` of every station.
    pub fn fit(ds: &Dataset, range: std::ops::Range<usize>) -> Result<Self> {
        let f = ds.feature_names.len();
        if range.is_empty() || range.end > ds.steps {
            return Err(Error::invalid(format!(
                "normalization range {range:?} outside {} steps",
                ds.steps
            )));
        }
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut count = 0.0;
        for s in &ds.stations {
            for i in range.clone() {
                let row = &s.features.data()[i * f..(i + 1) * f];
                for j in 0..f {
                    sum[j] += row[j];
                    sq[j] += row[j] * row[j];
                }
                count += 1.0;
            }
        }
        let mut mean = vec![0.0; f];
        let mut std = vec![GHI_SCALE; f];
        for j in 1..f {
            mean[j] = sum[j] / count;
            std[j] = (sq[j] / count - mean[j] * mean[j]).max(0.0).sqrt();
        }
        let n = Normalizer {
            feature_names: ds.feature_names.clone(),
            mean,
            std,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_names.len();
        if self.mean.len() != f || self.std.len() != f {
            return Err(Error::invalid("normalization statistics do not match the feature list"));
        }
        for (j, name) in self.feature_names.iter().enumerate() {
            let s = self.std[j];
            if !(s > 1e-12 && s.is_finite() && self.mean[j].is_finite()) {
                return Err(Error::invalid(format!(
                    "feature {name:?} has zero or non-finite spread ({s}); cannot standardize"
                )));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, feature: usize, value: f64) -> f64 {
        (value - self.mean[feature]) / self.std[feature]
    }

    pub fn denormalize(&self, feature: usize, value: f64) -> f64 {
        value * self.std[feature] + self.mean[feature]
    }

    /// Normalizes one `f`-wide row in place.
    pub fn normalize_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = self.normalize(j, *v);
        }
    }

    pub fn denormalize_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = self.denormalize(j, *v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm() -> Normalizer {
        Normalizer {
            feature_names: vec!["ghi".into(), "temperature".into()],
            mean: vec![0.0, 12.5],
            std: vec![GHI_SCALE, 4.0],
        }
    }

    #[test]
    fn ghi_scaling() {
        let n = norm();
        assert_eq!(n.normalize(0, 1.3), 1.0);
        assert_eq!(n.normalize(0, 0.0), 0.0);
    }

    #[test]
    fn round_trip() {
        let n = norm();
        for v in [0.0, 0.37, 1.1, -3.2, 25.0] {
            for j in 0..2 {
                assert!((n.denormalize(j, n.normalize(j, v)) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_spread_names_feature() {
        let mut n = norm();
        n.std[1] = 0.0;
        let msg = n.validate().unwrap_err().to_string();
        assert!(msg.contains("temperature"), "{msg}");
    }
}
