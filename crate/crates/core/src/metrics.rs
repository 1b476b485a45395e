//! Regression error metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("actual and predicted lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("metric needs at least {0} pairs")]
    Empty(usize),
    #[error("target is constant, R^2 is undefined")]
    ZeroVariance,
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn check(y: &[f64], y_hat: &[f64], min: usize) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(MetricError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < min {
        return Err(MetricError::Empty(min));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat, 1)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat, 1)?;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// `1 - SSE / SST`; negative when worse than predicting the mean.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Standardized,
    Original,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub model: String,
    pub strategy: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
    pub scale: Scale,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn compute(y: &[f64], y_hat: &[f64], scale: Scale, provenance: Provenance) -> Result<Self> {
        Ok(Self { mae: mae(y, y_hat)?, rmse: rmse(y, y_hat)?, r2: r2(y, y_hat)?, n: y.len(), scale, provenance })
    }
}
