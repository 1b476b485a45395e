//! `driftcast` command-line driver.

mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use driftcast::changepoint::{
    default_penalty, multivariate_detect, per_column_detect, standardized_penalty, union_changepoints, ChangepointError, CostModel,
    PenaltyConfig, Segmentation,
};
use driftcast::data::{forward_fill, load_csv, write_csv, CsvSchema, DataError, Scaler, SplitSpec, TimeSeriesFrame, TIMESTAMP_FORMAT};
use driftcast::features::{FeatureError, FeatureSpec};
use driftcast::lasso::LassoConfig;
use driftcast::metrics::Scale;
use driftcast::mlp::MlpConfig;
use driftcast::pipeline::{
    self, compare, write_predictions_csv, ComparisonRow, ComparisonTable, DetectOn, ModelSpec, PenaltyChoice, PipelineError, RunReport, Strategy,
    StrategyConfig, DEFAULT_DETECTION_MIN_SIZE,
};
use driftcast::synth::{self, SynthConfig, SYNTH_COLUMN};
use serde::Deserialize;

/// Drift-aware forecasting: synthetic data, changepoint detection,
/// baseline versus drift-triggered retraining, and comparison reports.
#[derive(Debug, Parser)]
#[command(name = "driftcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic hourly series with drift events.
    Synth(SynthArgs),
    /// Detect changepoints in one or more columns.
    Detect(DetectArgs),
    /// Train and evaluate one model under one strategy.
    Run(RunArgs),
    /// Tabulate run reports against their baselines.
    Compare(CompareArgs),
    /// Render an SVG from a data file or a CSV artifact.
    Plot(PlotArgs),
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    /// JSON generator config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; the ground-truth sidecar goes next to it as `.json`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "DRIFTCAST_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CostArg {
    L2,
    Gaussian,
}

impl CostArg {
    fn model(self) -> CostModel {
        match self {
            CostArg::L2 => CostModel::L2Mean,
            CostArg::Gaussian => CostModel::gaussian(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DetectOnArg {
    /// Lag features of the target (run only).
    Features,
    Target,
}

/// `auto` or a non-negative number.
#[derive(Debug, Clone, Copy)]
struct BetaArg(PenaltyChoice);

fn parse_beta(s: &str) -> Result<BetaArg, String> {
    if s == "auto" {
        return Ok(BetaArg(PenaltyChoice::Auto));
    }
    match s.parse::<f64>() {
        Ok(b) if b.is_finite() && b >= 0.0 => Ok(BetaArg(PenaltyChoice::Beta(b))),
        _ => Err(format!("expected `auto` or a non-negative number, got `{s}`")),
    }
}

#[derive(Debug, clap::Args)]
struct DetectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated columns, segmented jointly after standardization.
    #[arg(long, value_delimiter = ',', conflicts_with = "detect_on")]
    columns: Vec<String>,
    /// Segment the raw target column instead of `--columns`.
    #[arg(long, value_enum)]
    detect_on: Option<DetectOnArg>,
    #[arg(long, default_value = SYNTH_COLUMN)]
    target: String,
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
    #[arg(long, default_value = "auto", value_parser = parse_beta)]
    beta: BetaArg,
    #[arg(long, value_enum, default_value = "l2")]
    cost: CostArg,
    #[arg(long, default_value_t = driftcast::changepoint::DEFAULT_MIN_SIZE)]
    min_size: usize,
    /// Segment each column separately and report the union.
    #[arg(long)]
    per_column: bool,
    #[arg(long)]
    out: PathBuf,
    /// SVG with the series and detected changepoints.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Mlp,
    Lasso,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Baseline,
    Retrain,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = SYNTH_COLUMN)]
    target: String,
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "baseline")]
    strategy: StrategyArg,
    #[arg(long, env = "DRIFTCAST_SEED", default_value_t = 0)]
    seed: u64,
    /// Report JSON; side artifacts share its stem.
    #[arg(long)]
    out: PathBuf,
    /// Richer feature set for the retrained model.
    #[arg(long)]
    enriched: bool,
    /// Report metrics in target units instead of standardized units.
    #[arg(long)]
    original_units: bool,
    #[arg(long, default_value_t = SplitSpec::default().train_fraction)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value = "features")]
    detect_on: DetectOnArg,
    /// Comma-separated feature columns for detection.
    #[arg(long, value_delimiter = ',')]
    detect_columns: Vec<String>,
    #[arg(long, default_value = "auto", value_parser = parse_beta)]
    beta: BetaArg,
    #[arg(long, default_value_t = DEFAULT_DETECTION_MIN_SIZE)]
    min_size: usize,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    /// Glob matching report JSON files.
    #[arg(long)]
    reports: String,
    #[arg(long)]
    out: PathBuf,
    /// Three-panel grouped bar chart.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotKind {
    /// A data column, optionally with a segmentation overlay.
    Series,
    /// `timestamp,actual,predicted` from `run`.
    Predictions,
    /// `epoch,train_loss,val_loss` from an MLP run.
    Loss,
    /// `alpha,fold,val_mse` from a Lasso run.
    Cv,
    /// Comparison CSV from `compare`.
    Comparison,
}

#[derive(Debug, clap::Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    input: PathBuf,
    /// Column for `series` plots.
    #[arg(long, default_value = SYNTH_COLUMN)]
    column: String,
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
    /// Segmentation JSON whose changepoints are overlaid.
    #[arg(long)]
    segmentation: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying its exit code: 2 usage or config, 3 numeric, 4 I/O.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: 4, message: format!("{}: {e}", path.display()) }
    }
}

fn csv_is_io(e: &csv::Error) -> bool {
    matches!(e.kind(), csv::ErrorKind::Io(_))
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Io(_) => 4,
        DataError::Csv(c) if csv_is_io(c) => 4,
        _ => 2,
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self { code: data_code(&e), message: e.to_string() }
    }
}

impl From<ChangepointError> for Failure {
    fn from(e: ChangepointError) -> Self {
        let code = match &e {
            ChangepointError::NonFiniteInput(_) => 3,
            ChangepointError::Data(d) => data_code(d),
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            e if e.is_numeric() => 3,
            PipelineError::Data(d) | PipelineError::Feature(FeatureError::Data(d)) => data_code(d),
            PipelineError::Feature(FeatureError::Io(_)) => 4,
            PipelineError::Changepoint(ChangepointError::Data(d)) => data_code(d),
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_file(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn csv_bytes(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure::io(path, e))?;
    Ok(buf)
}

/// `dir/name.json` -> `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_frame(path: &Path, timestamp_column: &str, columns: &[&str]) -> Outcome<TimeSeriesFrame> {
    let schema = CsvSchema::new(timestamp_column).with_columns(columns.iter().copied());
    let mut frame = load_csv(path, &schema).map_err(|e| match e {
        DataError::Io(e) => Failure::io(path, e),
        e => e.into(),
    })?;
    for c in columns {
        if frame.missing_count(c)? > 0 {
            frame = forward_fill(&frame, c)?;
        }
    }
    Ok(frame)
}

fn range_labels(frame: &TimeSeriesFrame) -> Option<(String, String)> {
    let t = frame.timestamps();
    Some((t.first()?.format(TIMESTAMP_FORMAT).to_string(), t.last()?.format(TIMESTAMP_FORMAT).to_string()))
}

fn cmd_synth(args: SynthArgs) -> Outcome {
    let mut config = match &args.config {
        Some(p) => serde_json::from_str::<SynthConfig>(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let frame = synth::generate(&config).map_err(Failure::usage)?;
    let meta = synth::sidecar(&config).map_err(Failure::usage)?;
    write_csv(&frame, &args.out, "timestamp")?;
    let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    write_file(&sibling(&args.out, "json"), json + "\n")
}

fn cmd_detect(args: DetectArgs) -> Outcome {
    let columns: Vec<String> = match (args.detect_on, args.columns.is_empty()) {
        (Some(DetectOnArg::Features), _) => return Err(Failure::usage("`--detect-on features` applies to `run`; use `--columns` here")),
        (Some(DetectOnArg::Target), _) | (None, true) => vec![args.target.clone()],
        (None, false) => args.columns.clone(),
    };
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    let raw = load_frame(&args.data, &args.timestamp_column, &names)?;
    let n = raw.len();
    let model = args.cost.model();
    // A lone column keeps its units and the difference-based penalty; several
    // are standardized so their costs are commensurate.
    let frame = if names.len() > 1 { Scaler::fit(&raw, &names)?.apply(&raw)? } else { raw.clone() };
    let penalty = match (args.beta.0, names.len()) {
        (PenaltyChoice::Beta(b), _) => PenaltyConfig::new(b)?,
        (PenaltyChoice::Auto, 1) => default_penalty(&frame.values(names[0])?)?,
        (PenaltyChoice::Auto, d) => standardized_penalty(n, d)?,
    };
    let (json, changepoints) = if args.per_column {
        let segs = per_column_detect(&frame, &names, model, penalty, args.min_size)?;
        let union = union_changepoints(segs.iter().map(|(_, s)| s));
        let by_column: BTreeMap<&str, &Segmentation> = segs.iter().map(|(c, s)| (c.as_str(), s)).collect();
        let value = serde_json::json!({ "columns": by_column, "union": union });
        (serde_json::to_string_pretty(&value).expect("segmentations serialize"), union)
    } else {
        let seg = multivariate_detect(&frame, &names, model, penalty, args.min_size)?;
        (seg.to_json(), seg.changepoints().to_vec())
    };
    log::info!("{} changepoints in {} rows", changepoints.len(), n);
    write_file(&args.out, json + "\n")?;
    if let Some(path) = &args.plot {
        let series: Vec<Vec<f64>> = names.iter().map(|c| raw.values(c)).collect::<Result<_, _>>()?;
        let lines = names.iter().zip(&series).map(|(name, values)| svg::Line { name, values }).collect();
        let chart = svg::LineChart {
            title: "Detected changepoints",
            x_label: "row",
            y_label: if names.len() == 1 { names[0] } else { "value" },
            x_range_labels: range_labels(&raw),
            lines,
            markers: &changepoints,
        };
        write_file(path, svg::line_chart(&chart))?;
    }
    Ok(())
}

fn strategy_config(args: &RunArgs, dataset: String) -> Outcome<StrategyConfig> {
    let strategy = match args.strategy {
        StrategyArg::Baseline => Strategy::Baseline,
        StrategyArg::Retrain => Strategy::DriftRetrain,
    };
    let model = match args.model {
        ModelArg::Mlp => {
            let mut c = MlpConfig::default();
            if let Some(e) = args.max_epochs {
                c.max_epochs = e;
            }
            if let Some(lr) = args.learning_rate {
                c.learning_rate = lr;
            }
            if !args.hidden.is_empty() {
                c.hidden = args.hidden.clone();
            }
            c.validate().map_err(Failure::usage)?;
            ModelSpec::Mlp(c)
        }
        ModelArg::Lasso => ModelSpec::Lasso(LassoConfig::default()),
    };
    let mut config = StrategyConfig::new(strategy, model, args.seed);
    config.split = SplitSpec::new(args.train_fraction)?;
    config.scale = if args.original_units { Scale::Original } else { Scale::Standardized };
    config.retrain_features = args.enriched.then(FeatureSpec::enriched);
    config.detection.on = match args.detect_on {
        DetectOnArg::Features => DetectOn::Features(args.detect_columns.clone()),
        DetectOnArg::Target => DetectOn::Target,
    };
    config.detection.penalty = args.beta.0;
    config.detection.min_size = args.min_size;
    config.dataset = dataset;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Outcome {
    let frame = load_frame(&args.data, &args.timestamp_column, &[&args.target])?;
    let dataset = args.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let config = strategy_config(&args, dataset)?;
    let out = pipeline::run(&frame, &args.target, &config)?;
    let report = &out.report;
    if let Some(f) = report.fallback {
        log::warn!("retrain fell back to the baseline: {f:?}");
    }
    write_file(&args.out, report.to_json() + "\n")?;
    let model_json = serde_json::to_string_pretty(&out.model.to_json()).expect("model serializes");
    write_file(&sibling(&args.out, "model.json"), model_json + "\n")?;

    let pred_path = sibling(&args.out, "predictions.csv");
    write_file(&pred_path, csv_bytes(&pred_path, |b| write_predictions_csv(&out.predictions, b))?)?;
    let actual: Vec<f64> = out.predictions.iter().map(|p| p.actual).collect();
    let predicted: Vec<f64> = out.predictions.iter().map(|p| p.predicted).collect();
    let title = format!("{} {}: predicted vs actual", config.model.name(), config.strategy.name());
    let labels = out.predictions.first().zip(out.predictions.last()).map(|(a, b)| {
        (a.timestamp.format(TIMESTAMP_FORMAT).to_string(), b.timestamp.format(TIMESTAMP_FORMAT).to_string())
    });
    let chart = svg::LineChart {
        title: &title,
        x_label: "test row",
        y_label: &args.target,
        x_range_labels: labels,
        lines: vec![svg::Line { name: "actual", values: &actual }, svg::Line { name: "predicted", values: &predicted }],
        markers: &[],
    };
    write_file(&sibling(&args.out, "predictions.svg"), svg::line_chart(&chart))?;

    if let Some(tr) = &report.train_report {
        let path = sibling(&args.out, "loss.csv");
        write_file(&path, csv_bytes(&path, |b| tr.write_csv(b))?)?;
        write_file(&sibling(&args.out, "loss.svg"), loss_svg(&tr.train_loss, &tr.val_loss))?;
    }
    if let Some(cv) = &out.cv_report {
        let path = sibling(&args.out, "cv.csv");
        write_file(&path, csv_bytes(&path, |b| cv.write_csv(b))?)?;
        write_file(&sibling(&args.out, "cv.svg"), cv_svg(&cv.mean_mse))?;
    }
    log::info!("mae {} rmse {} r2 {}", report.eval.mae, report.eval.rmse, report.eval.r2);
    Ok(())
}

fn loss_svg(train: &[f64], val: &[f64]) -> String {
    svg::line_chart(&svg::LineChart {
        title: "Training and validation loss",
        x_label: "epoch",
        y_label: "MSE (standardized)",
        x_range_labels: Some(("1".into(), train.len().to_string())),
        lines: vec![svg::Line { name: "train", values: train }, svg::Line { name: "validation", values: val }],
        markers: &[],
    })
}

fn cv_svg(mean_mse: &[(f64, f64)]) -> String {
    let mse: Vec<f64> = mean_mse.iter().map(|p| p.1).collect();
    let labels = mean_mse.first().zip(mean_mse.last()).map(|(a, b)| (format!("alpha {}", a.0), format!("alpha {}", b.0)));
    svg::line_chart(&svg::LineChart {
        title: "Cross-validated MSE over the alpha grid",
        x_label: "alpha (grid order)",
        y_label: "mean validation MSE",
        x_range_labels: labels,
        lines: vec![svg::Line { name: "validation MSE", values: &mse }],
        markers: &[],
    })
}

fn comparison_svg(table: &ComparisonTable) -> String {
    let models: Vec<String> = table.rows.iter().map(|r| r.model.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let strategies: Vec<String> = table.rows.iter().map(|r| r.strategy.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let panel = |title, f: fn(&ComparisonRow) -> f64| svg::BarPanel {
        title,
        values: models.iter().map(|m| strategies.iter().map(|s| table.get(m, s).map(f)).collect()).collect(),
    };
    let panels = [panel("MAE", |r| r.mae), panel("RMSE", |r| r.rmse), panel("R2", |r| r.r2)];
    svg::grouped_bars("Metrics by model and strategy", &models, &strategies, &panels)
}

fn cmd_compare(args: CompareArgs) -> Outcome {
    let paths: Vec<PathBuf> = glob::glob(&args.reports)
        .map_err(|e| Failure::usage(format!("bad pattern `{}`: {e}", args.reports)))?
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::io(e.path(), e.error()))?;
    if paths.is_empty() {
        return Err(Failure::usage(format!("no reports match `{}`", args.reports)));
    }
    let reports = paths
        .iter()
        .map(|p| RunReport::from_json(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))))
        .collect::<Outcome<Vec<_>>>()?;
    let table = compare(&reports)?;
    write_file(&args.out, csv_bytes(&args.out, |b| table.write_csv(b))?)?;
    if let Some(path) = &args.plot {
        write_file(path, comparison_svg(&table))?;
    }
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| if csv_is_io(&e) { Failure::io(path, e) } else { Failure::usage(format!("{}: {e}", path.display())) })
}

#[derive(Deserialize)]
struct LossRow {
    train_loss: f64,
    val_loss: f64,
}

#[derive(Deserialize)]
struct CvRow {
    alpha: f64,
    val_mse: f64,
}

fn cmd_plot(args: PlotArgs) -> Outcome {
    let svg = match args.kind {
        PlotKind::Series => {
            let frame = load_frame(&args.input, &args.timestamp_column, &[&args.column])?;
            let markers = match &args.segmentation {
                Some(p) => {
                    let seg: Segmentation = serde_json::from_str(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
                    if seg.n() != frame.len() {
                        return Err(Failure::usage(format!("segmentation covers {} rows, data has {}", seg.n(), frame.len())));
                    }
                    seg.changepoints().to_vec()
                }
                None => Vec::new(),
            };
            let values = frame.values(&args.column)?;
            svg::line_chart(&svg::LineChart {
                title: &args.column,
                x_label: "row",
                y_label: &args.column,
                x_range_labels: range_labels(&frame),
                lines: vec![svg::Line { name: &args.column, values: &values }],
                markers: &markers,
            })
        }
        PlotKind::Predictions => {
            let frame = load_frame(&args.input, "timestamp", &["actual", "predicted"])?;
            let (actual, predicted) = (frame.values("actual")?, frame.values("predicted")?);
            svg::line_chart(&svg::LineChart {
                title: "Predicted vs actual",
                x_label: "test row",
                y_label: "value",
                x_range_labels: range_labels(&frame),
                lines: vec![svg::Line { name: "actual", values: &actual }, svg::Line { name: "predicted", values: &predicted }],
                markers: &[],
            })
        }
        PlotKind::Loss => {
            let rows: Vec<LossRow> = read_rows(&args.input)?;
            let train: Vec<f64> = rows.iter().map(|r| r.train_loss).collect();
            let val: Vec<f64> = rows.iter().map(|r| r.val_loss).collect();
            loss_svg(&train, &val)
        }
        PlotKind::Cv => {
            let rows: Vec<CvRow> = read_rows(&args.input)?;
            let mut grid: Vec<(f64, f64, usize)> = Vec::new();
            for r in rows {
                match grid.iter_mut().find(|g| g.0 == r.alpha) {
                    Some(g) => {
                        g.1 += r.val_mse;
                        g.2 += 1;
                    }
                    None => grid.push((r.alpha, r.val_mse, 1)),
                }
            }
            cv_svg(&grid.iter().map(|g| (g.0, g.1 / g.2 as f64)).collect::<Vec<_>>())
        }
        PlotKind::Comparison => {
            let rows: Vec<ComparisonRow> = read_rows(&args.input)?;
            comparison_svg(&ComparisonTable { scale: Scale::default(), rows })
        }
    };
    write_file(&args.out, svg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
