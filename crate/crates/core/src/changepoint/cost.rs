use serde::{Deserialize, Serialize};

use super::{ChangepointError, Result};

/// Default lower bound on the ML variance of a segment under [`CostModel::GaussianNll`].
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Per-segment cost. Both variants are subadditive, which is what makes
/// pruning with `K = 0` exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// Sum of squared deviations from the segment mean.
    #[default]
    L2Mean,
    /// Gaussian negative log-likelihood with segment-specific mean and
    /// variance, `(len / 2) * ln(max(var, floor))`, constants dropped.
    GaussianNll { variance_floor: f64 },
}

impl CostModel {
    pub fn gaussian() -> Self {
        CostModel::GaussianNll { variance_floor: DEFAULT_VARIANCE_FLOOR }
    }

    /// Shortest segment on which the cost is defined.
    pub fn min_segment_len(&self) -> usize {
        match self {
            CostModel::L2Mean => 1,
            CostModel::GaussianNll { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostModel::L2Mean => "l2_mean",
            CostModel::GaussianNll { .. } => "gaussian_nll",
        }
    }

    fn evaluate(&self, len: f64, sum: f64, sum_sq: f64) -> f64 {
        let ss = (sum_sq - sum * sum / len).max(0.0);
        match *self {
            CostModel::L2Mean => ss,
            CostModel::GaussianNll { variance_floor } => 0.5 * len * (ss / len).max(variance_floor).ln(),
        }
    }
}

/// Segment cost over the half-open row range `start..end`.
pub trait SegmentCost {
    fn n(&self) -> usize;
    fn min_segment_len(&self) -> usize;
    fn cost(&self, start: usize, end: usize) -> f64;
}

/// O(1) segment costs from prefix sums of one series.
///
/// Values are centered on their global mean before accumulation so the
/// `sum_sq - sum^2 / len` difference does not lose precision on series with
/// a large offset.
#[derive(Debug, Clone)]
pub struct PrefixCost {
    model: CostModel,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl PrefixCost {
    pub fn new(values: &[f64], model: CostModel) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ChangepointError::NonFiniteInput(i));
        }
        let center = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
        let mut sum = Vec::with_capacity(values.len() + 1);
        let mut sum_sq = Vec::with_capacity(values.len() + 1);
        let (mut s, mut q) = (0.0, 0.0);
        sum.push(s);
        sum_sq.push(q);
        for v in values {
            let c = v - center;
            s += c;
            q += c * c;
            sum.push(s);
            sum_sq.push(q);
        }
        Ok(Self { model, sum, sum_sq })
    }

    pub fn model(&self) -> CostModel {
        self.model
    }
}

impl SegmentCost for PrefixCost {
    fn n(&self) -> usize {
        self.sum.len() - 1
    }

    fn min_segment_len(&self) -> usize {
        self.model.min_segment_len()
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        debug_assert!(start < end && end <= self.n());
        let len = (end - start) as f64;
        self.model.evaluate(len, self.sum[end] - self.sum[start], self.sum_sq[end] - self.sum_sq[start])
    }
}

/// Sum of per-column costs over shared boundaries.
#[derive(Debug, Clone)]
pub struct SummedCost {
    columns: Vec<PrefixCost>,
    n: usize,
}

impl SummedCost {
    pub fn new(columns: Vec<PrefixCost>) -> Result<Self> {
        let n = columns.first().map(|c| c.n()).unwrap_or(0);
        if columns.iter().any(|c| c.n() != n) {
            return Err(ChangepointError::LengthMismatch);
        }
        Ok(Self { columns, n })
    }
}

impl SegmentCost for SummedCost {
    fn n(&self) -> usize {
        self.n
    }

    fn min_segment_len(&self) -> usize {
        self.columns.iter().map(|c| c.min_segment_len()).max().unwrap_or(1)
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        self.columns.iter().map(|c| c.cost(start, end)).sum()
    }
}

/// Cost of the inclusive segment `values[t1..=t2]`.
pub fn segment_cost(values: &[f64], t1: usize, t2: usize, model: CostModel) -> Result<f64> {
    if t1 > t2 || t2 >= values.len() {
        return Err(ChangepointError::InvalidSegment { t1, t2, n: values.len() });
    }
    let len = t2 - t1 + 1;
    if len < model.min_segment_len() {
        return Err(ChangepointError::SegmentTooShort { len, min: model.min_segment_len() });
    }
    Ok(PrefixCost::new(&values[t1..=t2], model)?.cost(0, len))
}
