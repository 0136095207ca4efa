//! The forecasting network: configuration, parameter layout, blocks, the
//! assembled forward pass and checkpoints.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod weights;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use forward::{forward, forward_bound, postprocess, predict, ForecastBatch, ForwardOptions, ModelInput};
pub use weights::{layout_signature, parameter_layout, ModelWeights};
