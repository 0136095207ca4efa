//! Forecast verification: deterministic and interval scores per
//! `(node, lead)` slice, and their aggregation views.
//!
//! All scores are fractions (0.1 means 10 %). Undefined scores, such as a
//! MAPE with no daytime point above the floor, are `None`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TimeStamp;
use crate::GHI_SCALE;

/// Points with truth at or below this value (kW/m²) are left out of MAPE.
pub const MAPE_FLOOR: f64 = 0.1;

/// One verified forecast value.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub node: String,
    /// Lead index, 0-based.
    pub lead: usize,
    /// Time of the first lead of the forecast this point belongs to.
    pub issue: TimeStamp,
    pub truth: f64,
    /// Quantile forecasts, ascending; a single value for deterministic
    /// models.
    pub quantiles: Vec<f64>,
}

impl Point {
    /// Point forecast: the middle quantile.
    pub fn median(&self) -> f64 {
        self.quantiles[self.quantiles.len() / 2]
    }

    pub fn target_time(&self) -> TimeStamp {
        self.issue.plus_steps(self.lead as i64)
    }

    pub fn is_night(&self) -> bool {
        self.truth == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub nrmse: Option<f64>,
    pub nmae: Option<f64>,
    pub mape: Option<f64>,
    pub picp: Option<f64>,
    pub pinaw: Option<f64>,
    pub ncrps: Option<f64>,
}

impl Scores {
    pub const NAMES: [&'static str; 6] = ["nrmse", "nmae", "mape", "picp", "pinaw", "ncrps"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.nrmse, self.nmae, self.mape, self.picp, self.pinaw, self.ncrps]
    }

    fn from_values(v: [Option<f64>; 6]) -> Self {
        Scores {
            nrmse: v[0],
            nmae: v[1],
            mape: v[2],
            picp: v[3],
            pinaw: v[4],
            ncrps: v[5],
        }
    }
}

/// `(NRMSE, NMAE, MAPE)` of point forecasts against `truth` (kW/m²).
///
/// With `night_excluded`, points whose truth is 0 are dropped first. MAPE is
/// only defined for the night-excluded view and averages over points above
/// [`MAPE_FLOOR`].
pub fn deterministic_metrics(
    truth: &[f64],
    forecast: &[f64],
    y_max: f64,
    night_excluded: bool,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    assert_eq!(truth.len(), forecast.len(), "truth and forecast lengths differ");
    let pairs: Vec<(f64, f64)> = truth
        .iter()
        .zip(forecast)
        .filter(|(y, _)| !night_excluded || **y != 0.0)
        .map(|(&y, &f)| (y, f))
        .collect();
    if pairs.is_empty() {
        return (None, None, None);
    }
    let n = pairs.len() as f64;
    let mse = pairs.iter().map(|(y, f)| (f - y) * (f - y)).sum::<f64>() / n;
    let mae = pairs.iter().map(|(y, f)| (f - y).abs()).sum::<f64>() / n;
    let mape = if night_excluded {
        let above: Vec<f64> = pairs
            .iter()
            .filter(|(y, _)| *y > MAPE_FLOOR)
            .map(|(y, f)| (f - y).abs() / y)
            .collect();
        (!above.is_empty()).then(|| above.iter().sum::<f64>() / above.len() as f64)
    } else {
        None
    };
    (Some(mse.sqrt() / y_max), Some(mae / y_max), mape)
}

/// Quantile loss `ρ_q(y, ŷ)`.
pub fn pinball(q: f64, y: f64, f: f64) -> f64 {
    if y >= f {
        q * (y - f)
    } else {
        (1.0 - q) * (f - y)
    }
}

/// `(PICP, PINAW, NCRPS)` for quantile forecasts at `levels`.
///
/// The interval runs from the first to the last quantile. PINAW divides the
/// summed interval width by the summed truth. NCRPS is `(2/Q)·Σ_q` of the
/// mean quantile loss, divided by `y_max`.
pub fn probabilistic_metrics(
    truth: &[f64],
    quantiles: &[Vec<f64>],
    levels: &[f64],
    y_max: f64,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    assert_eq!(truth.len(), quantiles.len(), "truth and forecast lengths differ");
    if truth.is_empty() || levels.len() < 2 {
        return (None, None, None);
    }
    let n = truth.len() as f64;
    let inside = truth
        .iter()
        .zip(quantiles)
        .filter(|(y, q)| q[0] <= **y && **y <= q[q.len() - 1])
        .count();
    let width: f64 = quantiles.iter().map(|q| q[q.len() - 1] - q[0]).sum();
    let total: f64 = truth.iter().sum();
    let pinaw = (total > 0.0).then(|| width / total);
    let mut crps = 0.0;
    for (k, &lv) in levels.iter().enumerate() {
        crps += truth
            .iter()
            .zip(quantiles)
            .map(|(&y, q)| pinball(lv, y, q[k]))
            .sum::<f64>()
            / n;
    }
    let ncrps = 2.0 / levels.len() as f64 * crps / y_max;
    (Some(inside as f64 / n), pinaw, Some(ncrps))
}

/// Every score over a set of points in one night mode.
pub fn score_points(points: &[&Point], levels: &[f64], night_excluded: bool) -> Scores {
    let kept: Vec<&Point> = points
        .iter()
        .copied()
        .filter(|p| !night_excluded || !p.is_night())
        .collect();
    let truth: Vec<f64> = kept.iter().map(|p| p.truth).collect();
    let median: Vec<f64> = kept.iter().map(|p| p.median()).collect();
    // night points were already removed above when requested
    let (nrmse, nmae, mape) = deterministic_metrics(&truth, &median, GHI_SCALE, night_excluded);
    let probabilistic = kept
        .first()
        .is_some_and(|p| p.quantiles.len() == levels.len() && levels.len() > 1);
    let (picp, pinaw, ncrps) = if probabilistic {
        let q: Vec<Vec<f64>> = kept.iter().map(|p| p.quantiles.clone()).collect();
        probabilistic_metrics(&truth, &q, levels, GHI_SCALE)
    } else {
        (None, None, None)
    };
    Scores {
        nrmse,
        nmae,
        mape,
        picp,
        pinaw,
        ncrps,
    }
}

/// Scores of one `(node, lead)` slice in both night modes.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceScores {
    pub node: String,
    pub lead: usize,
    pub all: Scores,
    pub day: Scores,
}

/// Aggregated scores in both night modes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModeScores {
    pub all: Scores,
    pub day: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Slices ordered by node id, then lead.
    pub slices: Vec<SliceScores>,
    /// Median across nodes, per lead.
    pub by_lead: Vec<(usize, ModeScores)>,
    /// Mean across nodes and leads, per issue minute of day.
    pub by_time_of_day: Vec<(u32, ModeScores)>,
    /// Mean across every slice.
    pub overall: ModeScores,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(v: Vec<f64>) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn combine(scores: &[Scores], f: fn(Vec<f64>) -> Option<f64>) -> Scores {
    let mut out = [None; 6];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = f(scores.iter().filter_map(|s| s.values()[k]).collect());
    }
    Scores::from_values(out)
}

fn combine_modes(slices: &[&SliceScores], f: fn(Vec<f64>) -> Option<f64>) -> ModeScores {
    let all: Vec<Scores> = slices.iter().map(|s| s.all).collect();
    let day: Vec<Scores> = slices.iter().map(|s| s.day).collect();
    ModeScores {
        all: combine(&all, f),
        day: combine(&day, f),
    }
}

/// Aggregates a `(node × lead)` grid of slice scores, plus optional
/// per-issue-time grids, into a report. Undefined slice values are skipped.
pub fn aggregate_report(slices: &[SliceScores], by_time: &[(u32, Vec<SliceScores>)]) -> MetricsReport {
    let mut slices = slices.to_vec();
    slices.sort_by(|a, b| a.node.cmp(&b.node).then(a.lead.cmp(&b.lead)));
    let mut leads: BTreeMap<usize, Vec<&SliceScores>> = BTreeMap::new();
    for s in &slices {
        leads.entry(s.lead).or_default().push(s);
    }
    let by_lead = leads.iter().map(|(&l, v)| (l, combine_modes(v, median))).collect();
    let mut by_time_of_day: Vec<(u32, ModeScores)> = by_time
        .iter()
        .map(|(m, v)| (*m, combine_modes(&v.iter().collect::<Vec<_>>(), mean)))
        .collect();
    by_time_of_day.sort_by_key(|(m, _)| *m);
    let overall = combine_modes(&slices.iter().collect::<Vec<_>>(), mean);
    MetricsReport {
        slices,
        by_lead,
        by_time_of_day,
        overall,
    }
}

fn slice_grid<'a>(points: impl Iterator<Item = &'a Point>, levels: &[f64]) -> Vec<SliceScores> {
    let mut groups: BTreeMap<(String, usize), Vec<&Point>> = BTreeMap::new();
    for p in points {
        groups.entry((p.node.clone(), p.lead)).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|((node, lead), pts)| SliceScores {
            node,
            lead,
            all: score_points(&pts, levels, false),
            day: score_points(&pts, levels, true),
        })
        .collect()
}

/// Scores every `(node, lead)` slice and every issue time of day, then
/// aggregates.
pub fn evaluate_points(points: &[Point], levels: &[f64]) -> MetricsReport {
    let grid = slice_grid(points.iter(), levels);
    let mut minutes: Vec<u32> = points.iter().map(|p| p.issue.minute_of_day()).collect();
    minutes.sort_unstable();
    minutes.dedup();
    let by_time: Vec<(u32, Vec<SliceScores>)> = minutes
        .into_iter()
        .map(|m| {
            (
                m,
                slice_grid(points.iter().filter(|p| p.issue.minute_of_day() == m), levels),
            )
        })
        .collect();
    aggregate_report(&grid, &by_time)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_rows(path: &Path, header: &str, rows: Vec<String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(f, "{header},{}", Scores::NAMES.join(",")).map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{r}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

fn mode_rows(key: &str, m: &ModeScores) -> [String; 2] {
    let fmt = |mode: &str, s: &Scores| {
        let cells: Vec<String> = s.values().iter().map(|v| cell(*v)).collect();
        format!("{key}{mode},{}", cells.join(","))
    };
    [fmt("all", &m.all), fmt("day", &m.day)]
}

impl MetricsReport {
    /// Writes `overall.csv`, `by_lead.csv`, `by_time_of_day.csv` and
    /// `slices.csv` into `dir`. The `mode` column is `all` (night included)
    /// or `day` (night excluded); undefined scores are empty cells.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join("overall.csv"), "mode", mode_rows("", &self.overall).to_vec())?;
        write_rows(
            &dir.join("by_lead.csv"),
            "lead,mode",
            self.by_lead
                .iter()
                .flat_map(|(l, m)| mode_rows(&format!("{},", l + 1), m))
                .collect(),
        )?;
        write_rows(
            &dir.join("by_time_of_day.csv"),
            "issue_time,mode",
            self.by_time_of_day
                .iter()
                .flat_map(|(t, m)| mode_rows(&format!("{:02}:{:02},", t / 60, t % 60), m))
                .collect(),
        )?;
        write_rows(
            &dir.join("slices.csv"),
            "node,lead,mode",
            self.slices
                .iter()
                .flat_map(|s| {
                    mode_rows(
                        &format!("{},{},", s.node, s.lead + 1),
                        &ModeScores { all: s.all, day: s.day },
                    )
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast_scores_zero() {
        let y = [0.2, 0.5, 0.9];
        let (r, a, m) = deterministic_metrics(&y, &y, 1.3, true);
        assert_eq!((r, a, m), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn constant_error_normalizes_by_peak() {
        let y = [0.2, 0.5, 0.9, 0.4];
        let f: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { v + 0.13 } else { v - 0.13 })
            .collect();
        let (r, a, _) = deterministic_metrics(&y, &f, 1.3, true);
        assert!((r.unwrap() - 0.1).abs() < 1e-12 && (a.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mape_floor() {
        let (_, _, m) = deterministic_metrics(&[0.05, 0.2], &[0.1, 0.1], 1.3, true);
        assert!((m.unwrap() - 0.5).abs() < 1e-15);
        let (_, _, m) = deterministic_metrics(&[0.05, 0.2], &[0.1, 0.1], 1.3, false);
        assert_eq!(m, None);
        assert_eq!(deterministic_metrics(&[0.0], &[0.1], 1.3, true), (None, None, None));
    }

    #[test]
    fn interval_scores() {
        let lv = [0.05, 0.5, 0.95];
        let q = vec![vec![0.5, 1.0, 1.5]; 2];
        let (picp, pinaw, _) = probabilistic_metrics(&[1.0, 1.0], &q, &lv, 1.3);
        assert_eq!(picp, Some(1.0));
        assert_eq!(pinaw, Some(1.0));
        let (picp, _, _) = probabilistic_metrics(&[1.0, 2.0], &q, &lv, 1.3);
        assert_eq!(picp, Some(0.5));
        let exact = vec![vec![0.7; 3], vec![0.2; 3]];
        let (_, _, crps) = probabilistic_metrics(&[0.7, 0.2], &exact, &lv, 1.3);
        assert_eq!(crps, Some(0.0));
        let (_, pinaw, _) = probabilistic_metrics(&[0.0, 0.0], &q, &lv, 1.3);
        assert_eq!(pinaw, None);
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
