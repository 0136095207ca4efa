//! The assembled forward pass from station series and images to quantile
//! trajectories.

use serde::{Deserialize, Serialize};

use super::blocks::{
    cross_block, decode, embed_time_series, patchify_embed, substitute_mask_token, temporal_block, CrossContext,
    Dropout,
};
use super::weights::ModelWeights;
use crate::attention::{build_ring_masks, ring_bias, rope_angles, RopeAngles, ROPE_BASE, ROPE_COORD_SCALE};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GeoPoint, TimeStamp};
use crate::graph::{Graph, Var};
use crate::params::Bound;
use crate::tensor::Tensor;
use crate::{FORECAST_CLIP, GHI_SCALE};

/// One forecasting problem in model units.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub node_ids: Vec<String>,
    pub positions: Vec<GeoPoint>,
    /// `[N, T, f]` normalized station features, GHI first.
    pub series: Tensor,
    /// The `T` past timestamps; the forecast starts one step after the last.
    pub timestamps: Vec<TimeStamp>,
    /// `[N, H]` clear-sky GHI over the horizon divided by [`GHI_SCALE`].
    pub clearsky: Tensor,
    /// `[h, w, T, c]` frames in `[0, 1]`, required when the model uses images.
    pub images: Option<Tensor>,
    pub bbox: BoundingBox,
    /// Nodes whose whole past sequence is replaced by the mask token.
    pub masked_nodes: Vec<usize>,
    /// Patch indices replaced by the patch mask token at every step.
    pub masked_patches: Vec<usize>,
}

impl ModelInput {
    pub fn nodes(&self) -> usize {
        self.positions.len()
    }

    /// Timestamps of the forecast leads.
    pub fn lead_times(&self, horizon: usize) -> Vec<TimeStamp> {
        let last = *self.timestamps.last().expect("validated input has timestamps");
        (1..=horizon as i64).map(|k| last.plus_steps(k)).collect()
    }

    fn validate(&self, w: &ModelWeights) -> Result<()> {
        let cfg = &w.config;
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::invalid("forecast needs at least one node"));
        }
        if self.node_ids.len() != n {
            return Err(Error::invalid(format!(
                "{} node ids for {} node positions",
                self.node_ids.len(),
                n
            )));
        }
        for p in &self.positions {
            p.validate()?;
        }
        let want = [n, cfg.past_steps, cfg.station_features];
        if self.series.shape() != want {
            return Err(Error::shape("model input series", self.series.shape(), &want));
        }
        if self.timestamps.len() != cfg.past_steps {
            return Err(Error::invalid(format!(
                "{} timestamps for {} past steps",
                self.timestamps.len(),
                cfg.past_steps
            )));
        }
        if self.timestamps.windows(2).any(|w| w[0].steps_until(w[1]) != 1) {
            return Err(Error::invalid("past timestamps must be consecutive 15-minute steps"));
        }
        if self.clearsky.shape() != [n, cfg.horizon] {
            return Err(Error::shape(
                "model input clearsky",
                self.clearsky.shape(),
                &[n, cfg.horizon],
            ));
        }
        if let Some(&i) = self.masked_nodes.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "masked node index {i} out of range for {n} nodes"
            )));
        }
        if cfg.use_images {
            let img = self
                .images
                .as_ref()
                .ok_or_else(|| Error::invalid("model uses images but none were supplied"))?;
            let want = [cfg.image_height, cfg.image_width, cfg.past_steps, cfg.channels];
            if img.shape() != want {
                return Err(Error::shape("model input images", img.shape(), &want));
            }
            let m = cfg.num_patches();
            if let Some(&j) = self.masked_patches.iter().find(|&&j| j >= m) {
                return Err(Error::invalid(format!(
                    "masked patch index {j} out of range for {m} patches"
                )));
            }
        }
        self.bbox.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub train: bool,
    /// Seed of the dropout stream; ignored when not training.
    pub seed: u64,
}

/// Inference output in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBatch {
    /// `[N, H, Q]` GHI in kW/m², ascending along the quantile axis.
    pub values: Tensor,
    pub node_ids: Vec<String>,
    pub lead_times: Vec<TimeStamp>,
}

/// Centers of the patch grid as geographic points, row-major.
pub fn patch_centers(bbox: &BoundingBox, height: usize, width: usize, patch: usize) -> Vec<GeoPoint> {
    let half = (patch as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity((height / patch) * (width / patch));
    for pr in 0..height / patch {
        for pc in 0..width / patch {
            let row = (pr * patch) as f64 + half;
            let col = (pc * patch) as f64 + half;
            out.push(bbox.pixel_center(height, width, row, col));
        }
    }
    out
}

fn angles_for(points: &[GeoPoint], bbox: &BoundingBox, d_head: usize) -> Result<RopeAngles> {
    let coords: Vec<(f64, f64)> = points.iter().map(|p| bbox.normalize(p, ROPE_COORD_SCALE)).collect();
    rope_angles(&coords, d_head, ROPE_BASE)
}

fn mask_indicator(shape: &[usize], axis_len: usize, indices: &[usize]) -> Result<Tensor> {
    let mut data = vec![0.0; axis_len];
    for &i in indices {
        data[i] = 1.0;
    }
    Tensor::new(shape, data)
}

/// Builds the forward pass onto `g` with already bound parameters and
/// returns raw `[N, H, Q]` outputs in normalized units.
pub fn forward_bound(
    g: &mut Graph,
    w: &ModelWeights,
    p: &Bound,
    input: &ModelInput,
    opts: ForwardOptions,
) -> Result<Var> {
    input.validate(w)?;
    let cfg = &w.config;
    let enc = cfg.encoder_attention();
    let n = input.nodes();
    let mut drop = Dropout::new(opts.seed, opts.train);

    let x = embed_time_series(g, &input.series, &input.timestamps, p)?;
    let node_mask = mask_indicator(&[n, 1, 1], n, &input.masked_nodes)?;
    let x = substitute_mask_token(g, x, &node_mask, p.get("mask.node"))?;
    let mut x = x;
    for i in 0..cfg.transformer_depth {
        x = temporal_block(g, x, p, &format!("temporal.{i}"), &enc, cfg.dropout, &mut drop)?;
    }
    // [N, T, d] -> [T, N, d]
    let mut x = g.permute(x, &[1, 0, 2])?;

    let node_angles = angles_for(&input.positions, &input.bbox, cfg.dim_per_head)?;
    if cfg.use_images {
        let frames = input.images.as_ref().expect("checked by validate");
        let m = cfg.num_patches();
        let ctx = patchify_embed(g, frames, cfg.patch_size, p)?;
        let patch_mask = mask_indicator(&[1, m, 1], m, &input.masked_patches)?;
        let ctx = substitute_mask_token(g, ctx, &patch_mask, p.get("mask.patch"))?;
        let centers = patch_centers(&input.bbox, cfg.image_height, cfg.image_width, cfg.patch_size);
        let patch_angles = angles_for(&centers, &input.bbox, cfg.dim_per_head)?;
        let masks = build_ring_masks(&input.positions, &centers, &cfg.ring)?;
        let bias = g.constant(ring_bias(&masks, cfg.ring.delta)?)?;
        let pos = CrossContext {
            query_angles: &node_angles,
            key_angles: &patch_angles,
            bias,
        };
        for i in 0..cfg.transformer_depth {
            x = cross_block(g, x, ctx, p, &format!("pixel.{i}"), &enc, &pos, &mut drop)?;
        }
    }

    let masks = build_ring_masks(&input.positions, &input.positions, &cfg.ring)?;
    let bias = g.constant(ring_bias(&masks, cfg.ring.delta)?)?;
    let pos = CrossContext {
        query_angles: &node_angles,
        key_angles: &node_angles,
        bias,
    };
    for i in 0..cfg.transformer_depth {
        x = cross_block(g, x, x, p, &format!("node.{i}"), &enc, &pos, &mut drop)?;
    }

    decode(
        g,
        x,
        &input.clearsky,
        p,
        &cfg.decoder_attention(),
        cfg.decoder_depth,
        cfg.output_heads,
        &mut drop,
    )
}

/// Raw `[N, H, Q]` outputs in normalized units, without recording gradients.
pub fn forward(w: &ModelWeights, input: &ModelInput, opts: ForwardOptions) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = w.params.bind_frozen(&mut g)?;
    let y = forward_bound(&mut g, w, &p, input, opts)?;
    Ok(g.value(y).clone())
}

/// Converts raw outputs to physical forecasts: quantiles sorted ascending,
/// scaled by [`GHI_SCALE`] and clipped to `[0, FORECAST_CLIP]`.
pub fn postprocess(raw: &Tensor) -> Tensor {
    let q = *raw.shape().last().unwrap_or(&1);
    let mut data = raw.data().to_vec();
    for row in data.chunks_mut(q) {
        row.sort_by(f64::total_cmp);
        for v in row.iter_mut() {
            *v = (*v * GHI_SCALE).clamp(0.0, FORECAST_CLIP);
        }
    }
    Tensor::from_parts(raw.shape().to_vec(), data)
}

/// Evaluation-mode forecast in kW/m².
pub fn predict(w: &ModelWeights, input: &ModelInput) -> Result<ForecastBatch> {
    let raw = forward(w, input, ForwardOptions::default())?;
    Ok(ForecastBatch {
        values: postprocess(&raw),
        node_ids: input.node_ids.clone(),
        lead_times: input.lead_times(w.config.horizon),
    })
}
