//! Reference forecasts built from clear-sky geometry and past GHI.
//!
//! Each baseline sees the same window as the model: `past` steps ending at
//! the issue time, then `horizon` leads to forecast.

use serde::{Deserialize, Serialize};

use crate::data::StationSeries;
use crate::geometry::clearsky_ghi_kw;

/// Clear-sky GHI below this value (kW/m²) gives no usable clear-sky index.
pub const MIN_CLEARSKY: f64 = 0.05;
/// Steps per hour on the 15-minute grid.
const HOUR: usize = 4;
const DAY: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// The clear-sky curve itself.
    ClearSky,
    /// Clear-sky index observed one day before each lead.
    ClearSkyPersistence,
    /// Clear-sky index of the last hour of daylight before issue, held over
    /// the horizon.
    SmartPersistence,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::ClearSky,
        Baseline::ClearSkyPersistence,
        Baseline::SmartPersistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::ClearSky => "clear-sky",
            Baseline::ClearSkyPersistence => "clear-sky-persistence",
            Baseline::SmartPersistence => "smart-persistence",
        }
    }
}

fn clearsky_at(s: &StationSeries, i: usize) -> f64 {
    clearsky_ghi_kw(&s.position, s.timestamp(i))
}

/// Mean clear-sky index over the last hour before `issue` (exclusive) with
/// clear-sky GHI above [`MIN_CLEARSKY`], walking back through at most `past`
/// steps; 1 when the past holds no daylight.
pub fn recent_clearsky_index(s: &StationSeries, issue: usize, past: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in (issue.saturating_sub(past)..issue).rev() {
        let cs = clearsky_at(s, i);
        if cs >= MIN_CLEARSKY {
            sum += s.ghi(i) / cs;
            n += 1;
            if n == HOUR {
                break;
            }
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Forecast of `horizon` leads issued at step `issue` (the first lead is step
/// `issue`), in kW/m², never negative.
pub fn baseline_forecast(s: &StationSeries, kind: Baseline, issue: usize, past: usize, horizon: usize) -> Vec<f64> {
    let k_recent = recent_clearsky_index(s, issue, past);
    (0..horizon)
        .map(|h| {
            let t = issue + h;
            let cs = clearsky_at(s, t);
            let v = match kind {
                Baseline::ClearSky => cs,
                Baseline::SmartPersistence => cs * k_recent,
                Baseline::ClearSkyPersistence => {
                    let cs_prev = clearsky_at(s, t - DAY.min(t));
                    if t < DAY || cs_prev < MIN_CLEARSKY {
                        cs * k_recent
                    } else {
                        cs * s.ghi(t - DAY) / cs_prev
                    }
                }
            };
            v.max(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeoPoint, TimeStamp};
    use crate::tensor::Tensor;

    fn station(scale: impl Fn(usize) -> f64) -> StationSeries {
        let position = GeoPoint::new(46.5, 7.5).unwrap();
        let start = TimeStamp::from_ymd_hm(2024, 6, 1, 0, 0).unwrap();
        let ghi: Vec<f64> = (0..3 * DAY)
            .map(|i| scale(i) * clearsky_ghi_kw(&position, start.plus_steps(i as i64)))
            .collect();
        StationSeries {
            node_id: "A".into(),
            position,
            start,
            features: Tensor::new(&[3 * DAY, 1], ghi).unwrap(),
        }
    }

    #[test]
    fn constant_index_is_reproduced() {
        let s = station(|_| 0.6);
        for kind in [Baseline::ClearSkyPersistence, Baseline::SmartPersistence] {
            let f = baseline_forecast(&s, kind, DAY + 40, DAY, DAY);
            for (h, v) in f.iter().enumerate() {
                let want = 0.6 * clearsky_at(&s, DAY + 40 + h);
                assert!((v - want).abs() < 1e-12, "{kind:?} lead {h}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn day_old_index_follows_yesterday() {
        let s = station(|i| if (i % DAY) < 48 { 0.3 } else { 0.9 });
        let f = baseline_forecast(&s, Baseline::ClearSkyPersistence, DAY + 40, DAY, DAY);
        let t = DAY + 40 + 20;
        let want = 0.9 * clearsky_at(&s, t);
        assert!((f[20] - want).abs() < 1e-12);
    }

    #[test]
    fn dark_past_falls_back_to_clear_sky() {
        let s = station(|_| 0.5);
        // issue right after midnight UTC: the preceding steps include the
        // previous evening only through `past`
        assert_eq!(recent_clearsky_index(&s, DAY, 1), 1.0);
    }
}
