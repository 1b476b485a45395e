//! The two forecasting strategies and their comparison.
//!
//! Baseline trains once on the whole training block. Drift-retrain runs
//! changepoint detection on the training block, discards everything before
//! the last changepoint, rebuilds features on the remainder and trains from
//! scratch. Both are scored on the same test block.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use log::{info, warn};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changepoint::{
    default_penalty, last_changepoint, multivariate_detect, pelt_detect, standardized_penalty, ChangepointError, CostModel,
    PenaltyConfig, Segmentation,
};
use crate::data::{DataError, Scaler, SplitSpec, TimeSeriesFrame, Timestamp};
use crate::features::{build_features, FeatureError, FeatureMatrix, FeatureSpec};
use crate::lasso::{lasso_cv, CvReport, LassoConfig, LassoError, LassoModel};
use crate::metrics::{EvalReport, MetricError, Provenance, Scale};
use crate::mlp::{mlp_train, MlpConfig, MlpError, MlpModel, TrainReport};

/// Feature columns used for detection unless configured otherwise.
pub const DEFAULT_DETECTION_COLUMNS: [&str; 3] = ["lag_1", "lag_24", "lag_168"];
/// One weekly cycle of hourly rows.
pub const DEFAULT_DETECTION_MIN_SIZE: usize = 168;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Changepoint(#[from] ChangepointError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("feature warmup of {warmup} rows leaves no training rows before the split at {boundary}")]
    NoTrainingRows { warmup: usize, boundary: usize },
    #[error("detection column {0} is not a feature column")]
    UnknownDetectionColumn(String),
    #[error("reports were evaluated on different datasets or test blocks")]
    MismatchedTestBlocks,
    #[error("no reports to compare")]
    NoReports,
}

impl PipelineError {
    /// Whether the failure is numerical (divergence, degenerate metric)
    /// rather than a usage or data problem.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::Mlp(MlpError::NonFiniteLoss { .. })
                | PipelineError::Metric(MetricError::ZeroVariance)
                | PipelineError::Changepoint(ChangepointError::NonFiniteInput(_))
        )
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    DriftRetrain,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::DriftRetrain => "drift_retrain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Lasso(LassoConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Mlp(_) => "mlp",
            ModelSpec::Lasso(_) => "lasso",
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        match self {
            ModelSpec::Mlp(c) => ModelSpec::Mlp(MlpConfig { seed, ..c.clone() }),
            ModelSpec::Lasso(c) => ModelSpec::Lasso(LassoConfig { seed, ..c.clone() }),
        }
    }

    /// Fewest rows a retrain may use before falling back.
    pub fn min_rows(&self) -> usize {
        match self {
            ModelSpec::Mlp(c) => (2 * c.batch_size).max(crate::mlp::MIN_TRAIN_ROWS),
            ModelSpec::Lasso(c) => c.cv_folds + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectOn {
    /// Standardized feature columns; an empty list means the defaults.
    Features(Vec<String>),
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    /// `2 d ln n` on standardized features, the variance-based default on
    /// the raw target.
    Auto,
    Beta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub on: DetectOn,
    pub cost_model: CostModel,
    pub penalty: PenaltyChoice,
    pub min_size: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            on: DetectOn::Features(Vec::new()),
            cost_model: CostModel::L2Mean,
            penalty: PenaltyChoice::Auto,
            min_size: DEFAULT_DETECTION_MIN_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub model: ModelSpec,
    pub feature_spec: FeatureSpec,
    /// Richer feature set for the retrained model only.
    pub retrain_features: Option<FeatureSpec>,
    pub detection: DetectionConfig,
    pub split: SplitSpec,
    pub scale: Scale,
    pub seed: u64,
    /// Dataset label for provenance.
    pub dataset: String,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, model: ModelSpec, seed: u64) -> Self {
        Self {
            strategy,
            model,
            feature_spec: FeatureSpec::default(),
            retrain_features: None,
            detection: DetectionConfig::default(),
            split: SplitSpec::default(),
            scale: Scale::Standardized,
            seed,
            dataset: String::from("dataset"),
        }
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self { strategy, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Mlp(MlpModel),
    Lasso(LassoModel),
}

impl TrainedModel {
    pub fn predict(&self, fm: &FeatureMatrix) -> Result<Array1<f64>> {
        Ok(match self {
            TrainedModel::Mlp(m) => m.predict(fm.x.view())?,
            TrainedModel::Lasso(m) => m.predict(fm.x.view())?,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            TrainedModel::Mlp(m) => m.to_json(),
            TrainedModel::Lasso(m) => m.to_json(),
        }
    }
}

/// Source-row ranges touched by each consumer, for leakage checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    /// First test row; everything before it is the training block.
    pub boundary: usize,
    pub test_rows: Range<usize>,
    /// Rows read by changepoint detection, if it ran.
    pub detection_rows: Option<Range<usize>>,
    /// Rows the model (and its scalers) were fitted on.
    pub model_rows: Range<usize>,
    /// Rows the evaluation scaler was fitted on.
    pub eval_scaler_rows: Range<usize>,
}

impl Audit {
    pub fn is_leak_free(&self) -> bool {
        let before = |r: &Range<usize>| r.end <= self.boundary;
        self.detection_rows.as_ref().is_none_or(before) && before(&self.model_rows) && before(&self.eval_scaler_rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestBlock {
    pub start_row: usize,
    pub rows: usize,
    /// Hash of the test timestamps and targets.
    pub target_sha256: String,
    /// Hash of the full test design matrix and targets.
    pub features_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    NoChangepoints,
    PostDriftTooShort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub eval: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub segmentation: Option<Segmentation>,
    pub training_rows_used: usize,
    /// Source row where the retrain segment starts (after feature warmup).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retrain_start_row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fallback: Option<Fallback>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_report: Option<TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen_alpha: Option<f64>,
    pub config: StrategyConfig,
    pub seed: u64,
    pub dataset_sha256: String,
    pub test_block: TestBlock,
    pub audit: Audit,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub timestamp: Timestamp,
    pub actual: f64,
    pub predicted: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub model: TrainedModel,
    /// Test-block predictions in original units.
    pub predictions: Vec<Prediction>,
    pub cv_report: Option<CvReport>,
}

pub fn write_predictions_csv<W: Write>(predictions: &[Prediction], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["timestamp", "actual", "predicted"])?;
    for p in predictions {
        wtr.write_record([p.timestamp.format(crate::data::TIMESTAMP_FORMAT).to_string(), p.actual.to_string(), p.predicted.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Splits and featurizes once; shared by both strategies.
struct Prepared {
    boundary: usize,
    train: FeatureMatrix,
    test: FeatureMatrix,
    eval_scaler: Scaler,
}

fn prepare(frame: &TimeSeriesFrame, target: &str, spec: &FeatureSpec, split: SplitSpec) -> Result<Prepared> {
    let (train_frame, _) = crate::data::chronological_split(frame, split)?;
    let boundary = train_frame.len();
    if spec.warmup() >= boundary {
        return Err(PipelineError::NoTrainingRows { warmup: spec.warmup(), boundary });
    }
    // Training features come from the truncated frame, so nothing after the
    // boundary can reach them.
    let train = build_features(&train_frame, target, spec)?;
    let test = test_features(frame, target, spec, boundary)?;
    let eval_scaler = Scaler::fit_vector(target, train.y.as_slice().expect("contiguous"));
    Ok(Prepared { boundary, train, test, eval_scaler })
}

/// Test rows may draw lags and rolling windows from the training block.
fn test_features(frame: &TimeSeriesFrame, target: &str, spec: &FeatureSpec, boundary: usize) -> Result<FeatureMatrix> {
    Ok(build_features(frame, target, spec)?.slice_source_rows(boundary..frame.len()))
}

fn fit_model(model: &ModelSpec, fm: &FeatureMatrix) -> Result<(TrainedModel, Option<TrainReport>, Option<CvReport>)> {
    Ok(match model {
        ModelSpec::Mlp(c) => {
            let (m, r) = mlp_train(c, fm)?;
            (TrainedModel::Mlp(m), Some(r), None)
        }
        ModelSpec::Lasso(c) => {
            let (m, r) = lasso_cv(fm, c)?;
            (TrainedModel::Lasso(m), None, Some(r))
        }
    })
}

fn evaluate(
    model: &TrainedModel,
    test: &FeatureMatrix,
    eval_scaler: &Scaler,
    scale: Scale,
    provenance: Provenance,
) -> Result<(EvalReport, Vec<Prediction>)> {
    let predicted = model.predict(test)?;
    let predictions = test
        .timestamps
        .iter()
        .zip(test.y.iter().zip(&predicted))
        .map(|(&timestamp, (&actual, &predicted))| Prediction { timestamp, actual, predicted })
        .collect();
    let (y, y_hat): (Vec<f64>, Vec<f64>) = match scale {
        Scale::Original => (test.y.to_vec(), predicted.to_vec()),
        Scale::Standardized => (
            test.y.iter().map(|&v| eval_scaler.transform_value(0, v)).collect(),
            predicted.iter().map(|&v| eval_scaler.transform_value(0, v)).collect(),
        ),
    };
    Ok((EvalReport::compute(&y, &y_hat, scale, provenance)?, predictions))
}

fn test_block(test: &FeatureMatrix) -> TestBlock {
    TestBlock {
        start_row: test.origin_index,
        rows: test.rows(),
        target_sha256: test.target_hash(),
        features_sha256: test.content_hash(),
    }
}

/// Runs the configured strategy.
pub fn run(frame: &TimeSeriesFrame, target: &str, config: &StrategyConfig) -> Result<RunOutput> {
    match config.strategy {
        Strategy::Baseline => run_baseline(frame, target, config),
        Strategy::DriftRetrain => run_drift_retrain(frame, target, config),
    }
}

/// Trains once on every training row.
pub fn run_baseline(frame: &TimeSeriesFrame, target: &str, config: &StrategyConfig) -> Result<RunOutput> {
    let prep = prepare(frame, target, &config.feature_spec, config.split)?;
    let model_spec = config.model.with_seed(config.seed);
    let (model, train_report, cv_report) = fit_model(&model_spec, &prep.train)?;
    finish(frame, config, &prep, &prep.test, model, train_report, cv_report, None, None, prep.train.source_rows(), None)
}

/// Detects drift on the training block and retrains on the post-drift rows,
/// falling back to the baseline fit when there is nothing usable.
pub fn run_drift_retrain(frame: &TimeSeriesFrame, target: &str, config: &StrategyConfig) -> Result<RunOutput> {
    let prep = prepare(frame, target, &config.feature_spec, config.split)?;
    let model_spec = config.model.with_seed(config.seed);
    let seg = detect_on_training(&prep.train, &config.detection)?;
    let detection_rows = Some(prep.train.source_rows());

    let fallback_fit = |reason: Fallback| -> Result<RunOutput> {
        let (model, tr, cv) = fit_model(&model_spec, &prep.train)?;
        finish(frame, config, &prep, &prep.test, model, tr, cv, Some(seg.clone()), Some(reason), prep.train.source_rows(), detection_rows.clone())
    };

    let Some(tau) = last_changepoint(&seg) else {
        info!("no changepoints in the training block; using the full training block");
        return fallback_fit(Fallback::NoChangepoints);
    };
    // Rebuild features on the post-drift raw segment alone, which advances
    // the start by the warmup so no pre-drift value feeds the retrain rows.
    let start = prep.train.origin_index + tau;
    let spec = config.retrain_features.as_ref().unwrap_or(&config.feature_spec);
    let segment = frame.slice_rows(start..prep.boundary);
    let post = if spec.warmup() < segment.len() { Some(build_features(&segment, target, spec)?) } else { None };
    let post = match post {
        Some(fm) if fm.rows() >= model_spec.min_rows() => fm,
        other => {
            warn!(
                "post-drift segment from row {start} yields {} rows, fewer than the {} the model needs; using the full training block",
                other.map_or(0, |fm| fm.rows()),
                model_spec.min_rows()
            );
            return fallback_fit(Fallback::PostDriftTooShort);
        }
    };
    let post = FeatureMatrix { origin_index: post.origin_index + start, ..post };
    let test = if config.retrain_features.is_some() { test_features(frame, target, spec, prep.boundary)? } else { prep.test.clone() };
    let (model, train_report, cv_report) = fit_model(&model_spec, &post)?;
    let mut out = finish(frame, config, &prep, &test, model, train_report, cv_report, Some(seg), None, post.source_rows(), detection_rows)?;
    out.report.retrain_start_row = Some(post.origin_index);
    Ok(out)
}

/// Segmentation of the training feature rows (indices relative to them).
fn detect_on_training(train: &FeatureMatrix, detection: &DetectionConfig) -> Result<Segmentation> {
    match &detection.on {
        DetectOn::Target => {
            let y = train.y.to_vec();
            let penalty = match detection.penalty {
                PenaltyChoice::Auto => default_penalty(&y)?,
                PenaltyChoice::Beta(b) => PenaltyConfig::new(b)?,
            };
            Ok(pelt_detect(&y, detection.cost_model, penalty, detection.min_size)?)
        }
        DetectOn::Features(cols) => {
            let cols: Vec<String> = if cols.is_empty() {
                DEFAULT_DETECTION_COLUMNS.iter().filter(|c| train.feature_names.iter().any(|n| n == *c)).map(|c| c.to_string()).collect()
            } else {
                cols.clone()
            };
            let mut columns = Vec::with_capacity(cols.len());
            for c in &cols {
                let v = train.column(c).ok_or_else(|| PipelineError::UnknownDetectionColumn(c.clone()))?;
                let v = v.to_vec();
                let scaler = Scaler::fit_vector(c, &v);
                columns.push((c.clone(), v.iter().map(|&x| scaler.transform_value(0, x)).collect()));
            }
            if columns.is_empty() {
                return Err(PipelineError::UnknownDetectionColumn(String::from("<none>")));
            }
            let n = train.rows();
            let frame = TimeSeriesFrame::from_values(train.timestamps.clone(), columns)?;
            let penalty = match detection.penalty {
                PenaltyChoice::Auto => standardized_penalty(n, cols.len())?,
                PenaltyChoice::Beta(b) => PenaltyConfig::new(b)?,
            };
            let names: Vec<&str> = cols.iter().map(String::as_str).collect();
            Ok(multivariate_detect(&frame, &names, detection.cost_model, penalty, detection.min_size)?)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    frame: &TimeSeriesFrame,
    config: &StrategyConfig,
    prep: &Prepared,
    test: &FeatureMatrix,
    model: TrainedModel,
    train_report: Option<TrainReport>,
    cv_report: Option<CvReport>,
    segmentation: Option<Segmentation>,
    fallback: Option<Fallback>,
    model_rows: Range<usize>,
    detection_rows: Option<Range<usize>>,
) -> Result<RunOutput> {
    let provenance = Provenance {
        dataset: config.dataset.clone(),
        model: config.model.name().to_string(),
        strategy: config.strategy.name().to_string(),
        seed: config.seed,
    };
    let (eval, predictions) = evaluate(&model, test, &prep.eval_scaler, config.scale, provenance)?;
    let audit = Audit {
        boundary: prep.boundary,
        test_rows: prep.boundary..frame.len(),
        detection_rows,
        model_rows: model_rows.clone(),
        eval_scaler_rows: prep.train.source_rows(),
    };
    debug_assert!(audit.is_leak_free());
    let chosen_alpha = match &model {
        TrainedModel::Lasso(m) => Some(m.chosen_alpha),
        TrainedModel::Mlp(_) => None,
    };
    let report = RunReport {
        eval,
        segmentation,
        training_rows_used: model_rows.len(),
        retrain_start_row: None,
        fallback,
        train_report,
        chosen_alpha,
        config: config.clone(),
        seed: config.seed,
        dataset_sha256: frame.content_hash(),
        test_block: test_block(test),
        audit,
    };
    Ok(RunOutput { report, model, predictions, cv_report })
}

/// One row of the comparison table. Deltas are against the baseline of the
/// same model family and blank when there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub strategy: String,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// `value - baseline` per metric.
    pub mae_delta: Option<f64>,
    pub rmse_delta: Option<f64>,
    pub r2_delta: Option<f64>,
    /// `(baseline - value) / baseline`: positive when the error shrank.
    pub mae_reduction: Option<f64>,
    pub rmse_reduction: Option<f64>,
    /// `(value - baseline) / |baseline|`: positive when R^2 grew.
    pub r2_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scale: Scale,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        if self.rows.is_empty() {
            wtr.write_record(["model", "strategy", "mae", "rmse", "r2"])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn get(&self, model: &str, strategy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model && r.strategy == strategy)
    }
}

/// Tabulates reports keyed by (model, strategy), sorted by key. When a key
/// repeats, the last report wins.
pub fn compare(reports: &[RunReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or(PipelineError::NoReports)?;
    if reports.iter().any(|r| {
        r.dataset_sha256 != first.dataset_sha256
            || r.test_block.target_sha256 != first.test_block.target_sha256
            || r.eval.scale != first.eval.scale
    }) {
        return Err(PipelineError::MismatchedTestBlocks);
    }
    let mut by_key: BTreeMap<(String, String), &EvalReport> = BTreeMap::new();
    for r in reports {
        by_key.insert((r.eval.provenance.model.clone(), r.eval.provenance.strategy.clone()), &r.eval);
    }
    let rows = by_key
        .iter()
        .map(|((model, strategy), e)| {
            let base = by_key.get(&(model.clone(), Strategy::Baseline.name().to_string()));
            let rel = |b: f64, v: f64| if b != 0.0 { Some((b - v) / b) } else { None };
            ComparisonRow {
                model: model.clone(),
                strategy: strategy.clone(),
                mae: e.mae,
                rmse: e.rmse,
                r2: e.r2,
                mae_delta: base.map(|b| e.mae - b.mae),
                rmse_delta: base.map(|b| e.rmse - b.rmse),
                r2_delta: base.map(|b| e.r2 - b.r2),
                mae_reduction: base.and_then(|b| rel(b.mae, e.mae)),
                rmse_reduction: base.and_then(|b| rel(b.rmse, e.rmse)),
                r2_increase: base.and_then(|b| if b.r2 != 0.0 { Some((e.r2 - b.r2) / b.r2.abs()) } else { None }),
            }
        })
        .collect();
    Ok(ComparisonTable { scale: first.eval.scale, rows })
}
