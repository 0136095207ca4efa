//! Day-ahead irradiance forecasting with a multimodal cross-attention
//! transformer over ground-station series and satellite-style image
//! sequences.

pub mod attention;
pub mod baselines;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

/// Peak GHI in kW/m² used to normalize irradiance and its errors.
pub const GHI_SCALE: f64 = 1.3;
/// Upper clip of inference forecasts in kW/m².
pub const FORECAST_CLIP: f64 = 1.5;
