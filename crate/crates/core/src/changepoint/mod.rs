//! Offline changepoint detection by penalized cost minimization.
//!
//! [`pelt_detect`] prunes the candidate set and runs in expected linear time
//! on series with regularly spaced changes; [`op_detect`] solves the same
//! problem without pruning in quadratic time and serves as its oracle. Both
//! return bit-identical results.

mod cost;
mod dp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TimeSeriesFrame};

pub use cost::{segment_cost, CostModel, PrefixCost, SegmentCost, SummedCost, DEFAULT_VARIANCE_FLOOR};
pub use dp::{DpTrace, PrunedCandidate};

/// Default minimum segment length.
pub const DEFAULT_MIN_SIZE: usize = 2;

/// Lower bound on an automatically chosen penalty.
pub const PENALTY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChangepointError {
    #[error("segment of length {len} is shorter than the minimum {min}")]
    SegmentTooShort { len: usize, min: usize },
    #[error("series of length {n} is too short, need at least {min}")]
    SeriesTooShort { n: usize, min: usize },
    #[error("segment {t1}..={t2} out of range for length {n}")]
    InvalidSegment { t1: usize, t2: usize, n: usize },
    #[error("penalty must be finite and non-negative, got {0}")]
    InvalidPenalty(f64),
    #[error("non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("columns differ in length")]
    LengthMismatch,
    #[error("no columns given")]
    NoColumns,
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = ChangepointError> = std::result::Result<T, E>;

/// Linear changepoint penalty `beta * m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub beta: f64,
}

impl PenaltyConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(ChangepointError::InvalidPenalty(beta));
        }
        Ok(Self { beta })
    }

    /// `beta * f(m)` with `f(m) = m`.
    pub fn charge(&self, m: usize) -> f64 {
        self.beta * m as f64
    }
}

/// `beta = 2 * sigma^2 * ln n`, with `sigma^2` estimated from first
/// differences, `mean((y[t+1] - y[t])^2) / 2`, so level shifts barely
/// inflate it. Floored at [`PENALTY_FLOOR`].
pub fn default_penalty(values: &[f64]) -> Result<PenaltyConfig> {
    let n = values.len();
    if n < 3 {
        return Err(ChangepointError::SeriesTooShort { n, min: 3 });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ChangepointError::NonFiniteInput(i));
    }
    let diff_sq = values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma2 = diff_sq / 2.0;
    PenaltyConfig::new((2.0 * sigma2 * (n as f64).ln()).max(PENALTY_FLOOR))
}

/// `beta = 2 * d * ln n` for `d` columns standardized to unit variance:
/// the same BIC-style charge as [`default_penalty`] but with the total
/// per-column variance (seasonal swings included) as the noise scale.
pub fn standardized_penalty(n: usize, columns: usize) -> Result<PenaltyConfig> {
    if n < 3 {
        return Err(ChangepointError::SeriesTooShort { n, min: 3 });
    }
    PenaltyConfig::new((2.0 * columns as f64 * (n as f64).ln()).max(PENALTY_FLOOR))
}

/// Ordered changepoints partitioning `0..n`; `0` and `n` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    n: usize,
    changepoints: Vec<usize>,
    total_cost: f64,
    beta: f64,
    cost_model: String,
}

impl Segmentation {
    pub fn new(n: usize, changepoints: Vec<usize>, total_cost: f64, beta: f64, cost_model: &str) -> Result<Self> {
        if changepoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ChangepointError::InvalidSegmentation("changepoints not strictly increasing".into()));
        }
        if changepoints.first().is_some_and(|&c| c == 0) || changepoints.last().is_some_and(|&c| c >= n) {
            return Err(ChangepointError::InvalidSegmentation(format!("changepoints must lie in (0, {n})")));
        }
        Ok(Self { n, changepoints, total_cost, beta, cost_model: cost_model.to_string() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn changepoints(&self) -> &[usize] {
        &self.changepoints
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cost_model(&self) -> &str {
        &self.cost_model
    }

    /// Half-open row ranges of all `m + 1` segments.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut bounds = Vec::with_capacity(self.changepoints.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.changepoints);
        bounds.push(self.n);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("segmentation serializes")
    }
}

/// Last changepoint, if any.
pub fn last_changepoint(seg: &Segmentation) -> Option<usize> {
    seg.changepoints.last().copied()
}

fn check_length(n: usize, min_size: usize) -> Result<()> {
    if n < 2 * min_size {
        return Err(ChangepointError::SeriesTooShort { n, min: 2 * min_size });
    }
    Ok(())
}

fn effective_min_size<C: SegmentCost>(cost: &C, min_size: usize) -> usize {
    min_size.max(cost.min_segment_len())
}

/// Runs the solver on any segment cost and returns the full state.
pub fn solve_with_trace<C: SegmentCost>(cost: &C, penalty: PenaltyConfig, min_size: usize, prune: bool) -> Result<DpTrace> {
    let min_size = effective_min_size(cost, min_size);
    check_length(cost.n(), min_size)?;
    Ok(dp::solve(cost, penalty.beta, min_size, prune))
}

fn detect<C: SegmentCost>(cost: &C, name: &str, penalty: PenaltyConfig, min_size: usize, prune: bool) -> Result<Segmentation> {
    let trace = solve_with_trace(cost, penalty, min_size, prune)?;
    Segmentation::new(cost.n(), trace.changepoints(), trace.total_cost(), penalty.beta, name)
}

/// Exact penalized segmentation with PELT pruning (`K = 0`).
pub fn pelt_detect(values: &[f64], model: CostModel, penalty: PenaltyConfig, min_size: usize) -> Result<Segmentation> {
    check_length(values.len(), min_size.max(model.min_segment_len()))?;
    detect(&PrefixCost::new(values, model)?, model.name(), penalty, min_size, true)
}

/// Unpruned optimal partitioning; quadratic, for verification.
pub fn op_detect(values: &[f64], model: CostModel, penalty: PenaltyConfig, min_size: usize) -> Result<Segmentation> {
    check_length(values.len(), min_size.max(model.min_segment_len()))?;
    detect(&PrefixCost::new(values, model)?, model.name(), penalty, min_size, false)
}

fn summed_cost(frame: &TimeSeriesFrame, columns: &[&str], model: CostModel) -> Result<SummedCost> {
    if columns.is_empty() {
        return Err(ChangepointError::NoColumns);
    }
    let tables = columns
        .iter()
        .map(|c| {
            let values = frame.values(c)?;
            PrefixCost::new(&values, model)
        })
        .collect::<Result<Vec<_>>>()?;
    SummedCost::new(tables)
}

/// Joint segmentation of several (standardized) columns: the cost of a
/// segment is the sum of its per-column costs. Only the listed columns are read.
pub fn multivariate_detect(
    frame: &TimeSeriesFrame,
    columns: &[&str],
    model: CostModel,
    penalty: PenaltyConfig,
    min_size: usize,
) -> Result<Segmentation> {
    let cost = summed_cost(frame, columns, model)?;
    check_length(frame.len(), min_size.max(model.min_segment_len()))?;
    detect(&cost, model.name(), penalty, min_size, true)
}

/// Independent detection per column; the caller may union the results.
pub fn per_column_detect(
    frame: &TimeSeriesFrame,
    columns: &[&str],
    model: CostModel,
    penalty: PenaltyConfig,
    min_size: usize,
) -> Result<Vec<(String, Segmentation)>> {
    columns
        .iter()
        .map(|c| {
            let values = frame.values(c)?;
            Ok((c.to_string(), pelt_detect(&values, model, penalty, min_size)?))
        })
        .collect()
}

/// Sorted union of changepoints across segmentations.
pub fn union_changepoints<'a>(segs: impl IntoIterator<Item = &'a Segmentation>) -> Vec<usize> {
    let mut all: Vec<usize> = segs.into_iter().flat_map(|s| s.changepoints.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    all
}
