//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use solar_crossformer::data::{SceneConfig, SplitConfig};
use solar_crossformer::model::ModelConfig;
use solar_crossformer::pipeline::EvalConfig;
use solar_crossformer::training::{LossKind, TrainConfig};
use solar_crossformer::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Forecast start (first lead), `YYYY-MM-DDTHH:MM` in UTC.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    /// Overrides both `train.seed` and `synth.seed` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub synth: SceneConfig,
}

/// Values given on the command line; `None` leaves the config untouched.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub start: Option<String>,
    pub seed: Option<u64>,
    pub loss: Option<LossKind>,
    pub no_images: bool,
    pub mask_nodes: Option<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    /// Applies flags, then the derived settings that keep the sections
    /// consistent with each other.
    pub fn resolve(mut self, o: Overrides) -> Result<Self> {
        if o.dataset.is_some() {
            self.dataset = o.dataset;
        }
        if o.checkpoint.is_some() {
            self.checkpoint = o.checkpoint;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        if o.start.is_some() {
            self.start = o.start;
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(loss) = o.loss {
            self.train.loss = loss;
        }
        if o.no_images {
            self.model.use_images = false;
        }
        if let Some(ids) = o.mask_nodes {
            self.eval.mask_nodes = ids;
        }
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.synth.seed = seed;
        }
        self.model.output_heads = self.train.output_heads();
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("missing --{flag} (or `{flag}` in the config file)")))
    }
}
