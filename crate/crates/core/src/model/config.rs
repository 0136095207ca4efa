use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, RingMaskSpec};
use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults are the full-size model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub transformer_depth: usize,
    pub transformer_heads: usize,
    pub dim_per_head: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub decoder_dim_per_head: usize,
    /// Number of output heads: 1 for a deterministic forecast, 3 for the
    /// 0.05/0.5/0.95 quantiles.
    pub output_heads: usize,
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    /// Station features per time step, GHI first.
    pub station_features: usize,
    pub past_steps: usize,
    pub horizon: usize,
    pub use_images: bool,
    pub ring: RingMaskSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            transformer_depth: 3,
            transformer_heads: 4,
            dim_per_head: 64,
            mlp_ratio: 3,
            dropout: 0.3,
            decoder_dim: 64,
            decoder_depth: 3,
            decoder_heads: 4,
            decoder_dim_per_head: 64,
            output_heads: 3,
            patch_size: 4,
            image_height: 96,
            image_width: 96,
            channels: 4,
            station_features: 3,
            past_steps: 96,
            horizon: 96,
            use_images: true,
            ring: RingMaskSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("transformer_depth", self.transformer_depth),
            ("transformer_heads", self.transformer_heads),
            ("dim_per_head", self.dim_per_head),
            ("mlp_ratio", self.mlp_ratio),
            ("decoder_dim", self.decoder_dim),
            ("decoder_heads", self.decoder_heads),
            ("decoder_dim_per_head", self.decoder_dim_per_head),
            ("output_heads", self.output_heads),
            ("patch_size", self.patch_size),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("station_features", self.station_features),
            ("past_steps", self.past_steps),
            ("horizon", self.horizon),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "model config: dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "model config: image {}x{} not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            )));
        }
        if !self.dim_per_head.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "model config: dim_per_head {} must be divisible by 4 for the rotary encoding",
                self.dim_per_head
            )));
        }
        self.ring.validate()?;
        if self.ring.heads() != self.transformer_heads {
            return Err(Error::invalid(format!(
                "model config: {} ring bands for {} attention heads",
                self.ring.heads(),
                self.transformer_heads
            )));
        }
        Ok(())
    }

    pub fn encoder_attention(&self) -> AttentionConfig {
        AttentionConfig {
            embed_dim: self.embed_dim,
            heads: self.transformer_heads,
            dim_per_head: self.dim_per_head,
            dropout: self.dropout,
        }
    }

    pub fn decoder_attention(&self) -> AttentionConfig {
        AttentionConfig {
            embed_dim: self.decoder_dim,
            heads: self.decoder_heads,
            dim_per_head: self.decoder_dim_per_head,
            dropout: self.dropout,
        }
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (a, b) = self.patch_grid();
        a * b
    }

    pub fn patch_features(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// A small configuration for tests and desk-scale experiments.
    pub fn small() -> Self {
        ModelConfig {
            embed_dim: 32,
            transformer_depth: 2,
            transformer_heads: 4,
            dim_per_head: 8,
            mlp_ratio: 2,
            dropout: 0.1,
            decoder_dim: 32,
            decoder_depth: 2,
            decoder_heads: 4,
            decoder_dim_per_head: 8,
            image_height: 32,
            image_width: 32,
            ..Self::default()
        }
    }

    /// The smallest configuration exercising every block, used for
    /// end-to-end gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 8,
            transformer_depth: 1,
            transformer_heads: 2,
            dim_per_head: 4,
            mlp_ratio: 2,
            dropout: 0.0,
            decoder_dim: 8,
            decoder_depth: 1,
            decoder_heads: 2,
            decoder_dim_per_head: 4,
            output_heads: 3,
            patch_size: 2,
            image_height: 4,
            image_width: 4,
            channels: 4,
            station_features: 3,
            past_steps: 4,
            horizon: 4,
            use_images: true,
            ring: RingMaskSpec {
                edges_km: vec![40.0],
                delta: 50.0,
            },
        }
    }
}
