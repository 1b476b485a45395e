//! Drift-aware forecasting: detect distributional changepoints with PELT,
//! retrain forecasters on the post-drift segment only, and compare against
//! a static baseline.

pub mod changepoint;
pub mod data;
pub mod features;
pub mod lasso;
pub mod metrics;
pub mod mlp;
pub mod synth;
pub mod pipeline;
