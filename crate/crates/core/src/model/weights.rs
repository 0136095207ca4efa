use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Layout(Vec<ParamSpec>);

impl Layout {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.push(
            format!("{prefix}.weight"),
            &[d_in, d_out],
            Init::Uniform { fan_in: d_in },
        );
        self.push(format!("{prefix}.bias"), &[d_out], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), &[d], Init::Ones);
        self.push(format!("{prefix}.beta"), &[d], Init::Zeros);
    }

    fn attention(&mut self, prefix: &str, d: usize, inner: usize) {
        for w in ["wq", "wk", "wv"] {
            self.push(format!("{prefix}.{w}"), &[d, inner], Init::Uniform { fan_in: d });
        }
        self.push(format!("{prefix}.wo"), &[inner, d], Init::Uniform { fan_in: inner });
    }

    /// GeGLU feed-forward: `d → 2·hidden` (value and gate), `hidden → d_out`.
    fn geglu(&mut self, prefix: &str, d: usize, hidden: usize, d_out: usize) {
        self.linear(&format!("{prefix}.fc1"), d, 2 * hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, d_out);
    }

    fn temporal_block(&mut self, prefix: &str, d: usize, inner: usize, ratio: usize) {
        self.norm(&format!("{prefix}.ln1"), d);
        self.attention(&format!("{prefix}.attn"), d, inner);
        self.norm(&format!("{prefix}.ln2"), d);
        self.geglu(&format!("{prefix}.mlp"), d, ratio * d, d);
    }

    fn cross_block(&mut self, prefix: &str, d: usize, inner: usize, ratio: usize) {
        self.norm(&format!("{prefix}.ln_q"), d);
        self.norm(&format!("{prefix}.ln_kv"), d);
        self.attention(&format!("{prefix}.attn"), d, inner);
        self.norm(&format!("{prefix}.ln2"), d);
        self.geglu(&format!("{prefix}.mlp"), d, ratio * d, d);
    }
}

/// Every learnable tensor of the model, in a fixed order fully determined by
/// the configuration.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut l = Layout::default();
    let d = cfg.embed_dim;
    let inner = cfg.transformer_heads * cfg.dim_per_head;
    let dd = cfg.decoder_dim;
    let dec_inner = cfg.decoder_heads * cfg.decoder_dim_per_head;

    // sequence embedding: raw features plus the 4-term calendar encoding
    l.linear("embed.series", cfg.station_features + 4, d);
    l.push("mask.node".into(), &[1], Init::Zeros);
    if cfg.use_images {
        l.linear("embed.patch", cfg.patch_features(), d);
        l.push("mask.patch".into(), &[1], Init::Zeros);
    }
    for i in 0..cfg.transformer_depth {
        l.temporal_block(&format!("temporal.{i}"), d, inner, cfg.mlp_ratio);
    }
    if cfg.use_images {
        for i in 0..cfg.transformer_depth {
            l.cross_block(&format!("pixel.{i}"), d, inner, cfg.mlp_ratio);
        }
    }
    for i in 0..cfg.transformer_depth {
        l.cross_block(&format!("node.{i}"), d, inner, cfg.mlp_ratio);
    }
    l.linear("decoder.handoff", d, dd);
    l.linear("decoder.clearsky", 1, dd);
    l.push("decoder.lead".into(), &[cfg.horizon, dd], Init::Uniform { fan_in: dd });
    for i in 0..cfg.decoder_depth {
        l.temporal_block(&format!("decoder.{i}"), dd, dec_inner, cfg.mlp_ratio);
    }
    l.norm("head.ln", dd);
    for q in 0..cfg.output_heads {
        l.geglu(&format!("head.{q}"), dd, cfg.mlp_ratio * dd, 1);
    }
    l.0
}

/// Names of parameters that exist only when satellite images are used.
pub fn is_image_parameter(name: &str) -> bool {
    name.starts_with("embed.patch") || name == "mask.patch" || name.starts_with("pixel.")
}

/// Configuration plus the learnable tensors it determines.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl ModelWeights {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for spec in parameter_layout(config) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            };
            params.insert(spec.name, Tensor::new(&spec.shape, data)?)?;
        }
        Ok(ModelWeights {
            config: config.clone(),
            params,
        })
    }

    /// Wraps existing tensors after checking them against the layout the
    /// configuration implies.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = layout_signature(&config);
        let got = params.signature();
        if expected != got {
            return Err(Error::LayoutMismatch {
                checkpoint: got,
                config: expected,
            });
        }
        Ok(ModelWeights { config, params })
    }

    pub fn signature(&self) -> String {
        self.params.signature()
    }
}

pub fn layout_signature(cfg: &ModelConfig) -> String {
    parameter_layout(cfg)
        .iter()
        .map(|p| format!("{}{:?}", p.name, p.shape))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_follows_layout() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(w.signature(), layout_signature(&cfg));
        assert_eq!(w.params.get("mask.node").unwrap().value.data(), &[0.0]);
        assert_eq!(w.params.get("temporal.0.ln1.gamma").unwrap().value.data(), &[1.0; 8]);
        let wq = &w.params.get("temporal.0.attn.wq").unwrap().value;
        let bound = (1.0f64 / 8.0).sqrt();
        assert!(wq.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn image_blocks_are_the_only_difference() {
        let full = parameter_layout(&ModelConfig::small());
        let bare = parameter_layout(&ModelConfig {
            use_images: false,
            ..ModelConfig::small()
        });
        let extra: Vec<_> = full.iter().filter(|p| !bare.contains(p)).collect();
        assert!(!extra.is_empty());
        assert!(extra.iter().all(|p| is_image_parameter(&p.name)));
        assert!(bare.iter().all(|p| full.contains(p)));
    }
}
