//! Station series, image sequences, windowing, normalization, the synthetic
//! scene generator and the on-disk dataset format.

pub mod io;
pub mod normalize;
pub mod synth;
pub mod windows;

use crate::error::{Error, Result};
use crate::geometry::{clearsky_ghi_kw, BoundingBox, GeoPoint, TimeStamp};
use crate::tensor::Tensor;

pub use io::{load_dataset, save_dataset, validate_dataset_dir, ValidationReport};
pub use normalize::Normalizer;
pub use synth::{synth_generate, CloudField, SceneConfig};
pub use windows::{make_windows, window_count, windows_for_targets, Split, SplitConfig};

/// Ground station with features on the 15-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StationSeries {
    pub node_id: String,
    pub position: GeoPoint,
    pub start: TimeStamp,
    /// `[steps, f]` in physical units, GHI (kW/m²) in column 0.
    pub features: Tensor,
}

impl StationSeries {
    pub fn steps(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn feature_count(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn timestamp(&self, i: usize) -> TimeStamp {
        self.start.plus_steps(i as i64)
    }

    pub fn ghi(&self, i: usize) -> f64 {
        self.features.data()[i * self.feature_count()]
    }
}

/// Satellite-style frames on the same 15-minute grid as the stations.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence {
    pub bbox: BoundingBox,
    pub start: TimeStamp,
    /// `[frames, h, w, c]` values in `[0, 1]`; row 0 is the northern edge.
    pub frames: Tensor,
}

impl ImageSequence {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    /// Frames `start..start + steps` rearranged to `[h, w, steps, c]`.
    pub fn window(&self, start: usize, steps: usize) -> Result<Tensor> {
        if start + steps > self.len() {
            return Err(Error::invalid(format!(
                "image window {start}..{} beyond {} frames",
                start + steps,
                self.len()
            )));
        }
        let (h, w, c) = self.dims();
        let frame = h * w * c;
        let src = self.frames.data();
        let mut out = vec![0.0; h * w * steps * c];
        for k in 0..steps {
            let f = &src[(start + k) * frame..(start + k + 1) * frame];
            for px in 0..h * w {
                let dst = (px * steps + k) * c;
                out[dst..dst + c].copy_from_slice(&f[px * c..(px + 1) * c]);
            }
        }
        Tensor::new(&[h, w, steps, c], out)
    }

    /// Nearest pixel `(row, col)` to a point inside the box.
    pub fn nearest_pixel(&self, p: &GeoPoint) -> (usize, usize) {
        let (h, w, _) = self.dims();
        let fx = (p.longitude - self.bbox.lon_min) / (self.bbox.lon_max - self.bbox.lon_min);
        let fy = (self.bbox.lat_max - p.latitude) / (self.bbox.lat_max - self.bbox.lat_min);
        let col = ((fx * w as f64).floor().max(0.0) as usize).min(w - 1);
        let row = ((fy * h as f64).floor().max(0.0) as usize).min(h - 1);
        (row, col)
    }
}

/// A complete multimodal dataset on a common time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub bbox: BoundingBox,
    pub start: TimeStamp,
    pub steps: usize,
    /// Names of the station feature columns, `ghi` first.
    pub feature_names: Vec<String>,
    pub stations: Vec<StationSeries>,
    pub images: Option<ImageSequence>,
}

pub const STEPS_PER_DAY: usize = 96;

impl Dataset {
    pub fn days(&self) -> usize {
        self.steps / STEPS_PER_DAY
    }

    pub fn timestamp(&self, i: usize) -> TimeStamp {
        self.start.plus_steps(i as i64)
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.node_id.clone()).collect()
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.stations
            .iter()
            .position(|s| s.node_id == id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Structural and physical consistency checks; returns every problem
    /// found rather than stopping at the first.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if let Err(e) = self.bbox.validate() {
            problems.push(e.to_string());
        }
        if self.feature_names.first().map(String::as_str) != Some("ghi") {
            problems.push("first feature must be ghi".into());
        }
        if self.stations.is_empty() {
            problems.push("no stations".into());
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.stations {
            let id = &s.node_id;
            if !seen.insert(id.clone()) {
                problems.push(format!("duplicate node id {id:?}"));
            }
            if let Err(e) = s.position.validate() {
                problems.push(format!("node {id}: {e}"));
            }
            if !self.bbox.contains(&s.position) {
                problems.push(format!("node {id}: position outside the bounding box"));
            }
            if s.start != self.start || s.steps() != self.steps {
                problems.push(format!(
                    "node {id}: covers {} steps from {}, dataset has {} from {}",
                    s.steps(),
                    s.start,
                    self.steps,
                    self.start
                ));
                continue;
            }
            if s.feature_count() != self.feature_names.len() {
                problems.push(format!(
                    "node {id}: {} feature columns, manifest lists {}",
                    s.feature_count(),
                    self.feature_names.len()
                ));
                continue;
            }
            if !s.features.is_finite() {
                problems.push(format!("node {id}: non-finite feature value"));
            }
            for i in 0..s.steps() {
                let g = s.ghi(i);
                if g < 0.0 {
                    problems.push(format!("node {id}: negative ghi {g} at {}", s.timestamp(i)));
                    break;
                }
                if g != 0.0 && clearsky_ghi_kw(&s.position, s.timestamp(i)) == 0.0 {
                    problems.push(format!("node {id}: ghi {g} at night ({})", s.timestamp(i)));
                    break;
                }
            }
        }
        if let Some(img) = &self.images {
            if img.start != self.start || img.len() != self.steps {
                problems.push(format!(
                    "images cover {} frames from {}, dataset has {} steps from {}",
                    img.len(),
                    img.start,
                    self.steps,
                    self.start
                ));
            }
            if img.frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                problems.push("image values must be finite and within [0, 1]".into());
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        match self.check().into_iter().next() {
            None => Ok(()),
            Some(first) => Err(Error::invalid(first)),
        }
    }
}
