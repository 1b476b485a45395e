//! L1-regularized least squares by cyclic coordinate descent, with
//! expanding-window cross-validation over a grid of penalties.
//!
//! The objective is `(1/2n) ||y - X b||^2 + alpha ||b||_1` on standardized
//! columns and a centered target; the intercept is the target mean and is
//! never penalized.

use std::io::Write;
use std::ops::Range;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Scaler;
use crate::features::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum LassoError {
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { got: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("alpha grid is empty")]
    EmptyGrid,
}

pub type Result<T, E = LassoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub alpha_grid: Vec<f64>,
    pub cv_folds: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Reserved; the solver is deterministic.
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { alpha_grid: vec![0.001, 0.01, 0.1, 1.0], cv_folds: 5, max_iter: 10_000, tol: 1e-7, seed: 0 }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Raw solver output on an already prepared design.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub coefficients: Array1<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each full sweep (first entry: at the zero start).
    pub objective_trace: Vec<f64>,
}

/// Coordinate descent on `x`, `y` exactly as given (no centering or
/// scaling). Works on the Gram matrix, so each sweep costs `O(d^2)`.
pub fn coordinate_descent(x: ArrayView2<f64>, y: ArrayView1<f64>, alpha: f64, max_iter: usize, tol: f64) -> Result<Descent> {
    if x.nrows() != y.len() {
        return Err(LassoError::ShapeMismatch(format!("{} rows vs {} targets", x.nrows(), y.len())));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(LassoError::InvalidAlpha(alpha));
    }
    let n = x.nrows() as f64;
    let d = x.ncols();
    let gram = x.t().dot(&x) / n;
    let xty = x.t().dot(&y) / n;
    let yty = y.dot(&y) / n;
    let objective = |b: &Array1<f64>| 0.5 * (yty - 2.0 * b.dot(&xty) + b.dot(&gram.dot(b))) + alpha * b.mapv(f64::abs).sum();

    let mut b = Array1::zeros(d);
    // gb = G b, kept in sync with b
    let mut gb = Array1::<f64>::zeros(d);
    let mut trace = vec![objective(&b)];
    let mut converged = d == 0;
    let mut sweeps = 0;
    while !converged && sweeps < max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            let gjj = gram[[j, j]];
            if gjj <= 0.0 {
                continue;
            }
            let rho = xty[j] - gb[j] + gjj * b[j];
            let new = soft_threshold(rho, alpha) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                gb.scaled_add(delta, &gram.column(j));
                b[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(objective(&b));
        converged = max_change < tol;
    }
    Ok(Descent { coefficients: b, sweeps, converged, objective_trace: trace })
}

/// `X_j^T (y - X b) / n` for every column.
pub fn kkt_correlations(x: ArrayView2<f64>, y: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let r = &y - &x.dot(&b);
    x.t().dot(&r) / x.nrows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub feature_names: Vec<String>,
    /// Coefficients on the standardized inputs.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub chosen_alpha: f64,
    pub scaler: Scaler,
    pub converged: bool,
    pub sweeps: usize,
}

impl LassoModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(LassoError::ShapeMismatch(format!(
                "{} columns, model expects {}",
                x.ncols(),
                self.coefficients.len()
            )));
        }
        let z = self.scaler.transform_matrix(x);
        Ok(z.dot(&Array1::from(self.coefficients.clone())) + self.intercept)
    }

    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }

    /// `{feature_names -> coefficients, intercept, chosen_alpha, scaler}`.
    pub fn to_json(&self) -> serde_json::Value {
        let coefs: serde_json::Map<String, serde_json::Value> =
            self.feature_names.iter().zip(&self.coefficients).map(|(n, c)| (n.clone(), (*c).into())).collect();
        serde_json::json!({
            "coefficients": coefs,
            "feature_order": self.feature_names,
            "intercept": self.intercept,
            "chosen_alpha": self.chosen_alpha,
            "converged": self.converged,
            "scaler": self.scaler,
        })
    }
}

/// Standardizes `x`, centers `y`, and solves. Non-convergence is logged and
/// flagged on the model rather than treated as an error.
pub fn lasso_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, names: &[String], alpha: f64, config: &LassoConfig) -> Result<LassoModel> {
    if x.nrows() == 0 {
        return Err(LassoError::TooFewRows { got: 0, min: 1 });
    }
    if names.len() != x.ncols() {
        return Err(LassoError::ShapeMismatch(format!("{} names for {} columns", names.len(), x.ncols())));
    }
    let scaler = Scaler::fit_matrix(x, names);
    let z = scaler.transform_matrix(x);
    let y_mean = y.mean().expect("non-empty");
    let yc = y.mapv(|v| v - y_mean);
    let fit = coordinate_descent(z.view(), yc.view(), alpha, config.max_iter, config.tol)?;
    if !fit.converged {
        warn!("lasso did not converge for alpha = {alpha} after {} sweeps", fit.sweeps);
    }
    Ok(LassoModel {
        feature_names: names.to_vec(),
        coefficients: fit.coefficients.to_vec(),
        intercept: y_mean,
        chosen_alpha: alpha,
        scaler,
        converged: fit.converged,
        sweeps: fit.sweeps,
    })
}

/// Expanding-window folds: `k + 1` contiguous blocks, the remainder going to
/// the earliest blocks; fold `i` trains on blocks `1..=i` and validates on
/// block `i + 1`.
pub fn timeseries_folds(n_rows: usize, k: usize) -> Result<Vec<(Range<usize>, Range<usize>)>> {
    if k == 0 || n_rows < k + 1 {
        return Err(LassoError::TooFewRows { got: n_rows, min: k + 1 });
    }
    let blocks = k + 1;
    let (base, extra) = (n_rows / blocks, n_rows % blocks);
    let mut ends = Vec::with_capacity(blocks);
    let mut end = 0;
    for b in 0..blocks {
        end += base + usize::from(b < extra);
        ends.push(end);
    }
    Ok((1..=k).map(|i| (0..ends[i - 1], ends[i - 1]..ends[i])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub alpha: f64,
    pub fold: usize,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CvReport {
    pub records: Vec<CvRecord>,
    /// `(alpha, mean validation MSE)` in grid order.
    pub mean_mse: Vec<(f64, f64)>,
}

impl CvReport {
    /// CSV with header `alpha,fold,val_mse`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["alpha", "fold", "val_mse"])?;
        for r in &self.records {
            wtr.write_record([r.alpha.to_string(), r.fold.to_string(), r.val_mse.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn rows(x: ArrayView2<f64>, r: Range<usize>) -> Array2<f64> {
    x.select(Axis(0), &r.collect::<Vec<_>>())
}

/// Grid search by expanding-window CV (scalers refit per fold), then a refit
/// on every row with the winning alpha. Ties go to the larger alpha.
pub fn lasso_cv(features: &FeatureMatrix, config: &LassoConfig) -> Result<(LassoModel, CvReport)> {
    lasso_cv_arrays(features.x.view(), features.y.view(), &features.feature_names, config)
}

pub fn lasso_cv_arrays(x: ArrayView2<f64>, y: ArrayView1<f64>, names: &[String], config: &LassoConfig) -> Result<(LassoModel, CvReport)> {
    if config.alpha_grid.is_empty() {
        return Err(LassoError::EmptyGrid);
    }
    if let Some(&a) = config.alpha_grid.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(LassoError::InvalidAlpha(a));
    }
    if x.nrows() != y.len() {
        return Err(LassoError::ShapeMismatch(format!("{} rows vs {} targets", x.nrows(), y.len())));
    }
    let folds = timeseries_folds(x.nrows(), config.cv_folds)?;
    let mut report = CvReport::default();
    for &alpha in &config.alpha_grid {
        let mut total = 0.0;
        for (i, (train, val)) in folds.iter().enumerate() {
            let model = lasso_fit(rows(x, train.clone()).view(), y.slice(ndarray::s![train.clone()]), names, alpha, config)?;
            let pred = model.predict(rows(x, val.clone()).view())?;
            let yv = y.slice(ndarray::s![val.clone()]);
            let mse = (&pred - &yv).mapv(|e| e * e).mean().expect("non-empty fold");
            report.records.push(CvRecord { alpha, fold: i + 1, val_mse: mse });
            total += mse;
        }
        report.mean_mse.push((alpha, total / folds.len() as f64));
    }
    let (mut best_alpha, mut best_mse) = report.mean_mse[0];
    for &(alpha, mse) in &report.mean_mse[1..] {
        if mse < best_mse || (mse == best_mse && alpha > best_alpha) {
            (best_alpha, best_mse) = (alpha, mse);
        }
    }
    log::info!("cross-validation chose alpha = {best_alpha}{}", if best_alpha == 0.01 { " (the commonly cited setting)" } else { "" });
    let model = lasso_fit(x, y, names, best_alpha, config)?;
    Ok((model, report))
}
