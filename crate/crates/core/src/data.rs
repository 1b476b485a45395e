//! Timestamped numeric tables: CSV ingestion, gap handling, chronological
//! splitting and z-score scaling.
//!
//! Missing readings are represented as `None` inside a column. Non-finite
//! payloads never appear as `Some`, so a present value is always a valid
//! reading.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Naive local instant; no time-zone arithmetic is performed anywhere.
pub type Timestamp = NaiveDateTime;

/// Format used when writing timestamps.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Substituted for the standard deviation of (near) constant columns.
pub const STD_FLOOR: f64 = 1e-8;

/// Minimum row count accepted by [`chronological_split`].
pub const MIN_SPLIT_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in file")]
    MissingColumn(String),
    #[error("unparseable timestamp `{value}` on data row {row}")]
    UnparseableTimestamp { value: String, row: usize },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(Timestamp),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("column `{0}` starts with a missing value; nothing to fill from")]
    LeadingGap(String),
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { got: usize, min: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` contains missing values")]
    MissingValues(String),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("split boundary {boundary} leaves an empty side of a {n}-row frame")]
    DegenerateSplit { boundary: usize, n: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Timestamped multi-column numeric table.
///
/// Timestamps are strictly increasing, all columns share the row count and
/// column names are unique and non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    timestamps: Vec<Timestamp>,
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

impl TimeSeriesFrame {
    pub fn new(timestamps: Vec<Timestamp>, columns: Vec<(String, Vec<Option<f64>>)>) -> Result<Self> {
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(if w[0] == w[1] {
                DataError::DuplicateTimestamp(w[0])
            } else {
                DataError::InvalidFrame(format!("timestamps not increasing at {}", w[1]))
            });
        }
        let mut seen = HashSet::new();
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (name, values) in columns {
            if name.is_empty() {
                return Err(DataError::InvalidFrame("empty column name".into()));
            }
            if !seen.insert(name.clone()) {
                return Err(DataError::InvalidFrame(format!("duplicate column `{name}`")));
            }
            if values.len() != timestamps.len() {
                return Err(DataError::InvalidFrame(format!(
                    "column `{name}` has {} rows, expected {}",
                    values.len(),
                    timestamps.len()
                )));
            }
            names.push(name);
            data.push(values.into_iter().map(|v| v.filter(|x| x.is_finite())).collect());
        }
        Ok(Self { timestamps, names, columns: data })
    }

    /// Builds a frame from fully observed columns; non-finite entries become missing.
    pub fn from_values(timestamps: Vec<Timestamp>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        Self::new(
            timestamps,
            columns
                .into_iter()
                .map(|(n, v)| (n, v.into_iter().map(Some).collect()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    /// Fully observed values of a column.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .iter()
            .map(|v| v.ok_or_else(|| DataError::MissingValues(name.to_string())))
            .collect()
    }

    pub fn missing_count(&self, name: &str) -> Result<usize> {
        Ok(self.column(name)?.iter().filter(|v| v.is_none()).count())
    }

    /// Returns a copy with `name` replaced (or appended when absent).
    pub fn with_column(&self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        let mut columns: Vec<(String, Vec<Option<f64>>)> =
            self.names.iter().cloned().zip(self.columns.iter().cloned()).collect();
        match columns.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = values,
            None => columns.push((name.to_string(), values)),
        }
        Self::new(self.timestamps.clone(), columns)
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| Ok((n.to_string(), self.column(n)?.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.timestamps.clone(), columns)
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[rows.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[rows.clone()].to_vec()).collect(),
        }
    }

    /// True when consecutive timestamps are exactly one hour apart.
    pub fn is_hourly(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[1] - w[0] == TimeDelta::hours(1))
    }

    /// SHA-256 over timestamps, column names and value bit patterns.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.timestamps {
            h.update(t.and_utc().timestamp().to_le_bytes());
            h.update(t.and_utc().timestamp_subsec_nanos().to_le_bytes());
        }
        for (name, col) in self.names.iter().zip(&self.columns) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for v in col {
                match v {
                    Some(x) => {
                        h.update([1u8]);
                        h.update(x.to_bits().to_le_bytes());
                    }
                    None => h.update([0u8]),
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Which CSV columns to read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub timestamp: String,
    /// `None` reads every non-timestamp column.
    pub columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { timestamp: "timestamp".into(), columns: None }
    }
}

impl CsvSchema {
    pub fn new(timestamp: impl Into<String>) -> Self {
        Self { timestamp: timestamp.into(), columns: None }
    }

    pub fn with_columns<S: Into<String>>(mut self, columns: impl IntoIterator<Item = S>) -> Self {
        self.columns = Some(columns.into_iter().map(Into::into).collect());
        self
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let file = File::open(path.as_ref())?;
    let frame = read_csv(file, schema)?;
    log::info!("loaded {} rows from {}", frame.len(), path.as_ref().display());
    Ok(frame)
}

/// Reads a headered CSV; rows are sorted by timestamp, cells that do not
/// parse as finite numbers become missing.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DataError::EmptyFile),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Err(DataError::EmptyFile),
    };
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let ts_idx = index_of(&schema.timestamp)?;
    let wanted: Vec<String> = match &schema.columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let col_idx = wanted.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(Timestamp, Vec<Option<f64>>)> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts)
            .ok_or_else(|| DataError::UnparseableTimestamp { value: raw_ts.to_string(), row: row + 1 })?;
        let values = col_idx.iter().map(|&i| parse_cell(record.get(i).unwrap_or(""))).collect();
        rows.push((ts, values));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile);
    }
    rows.sort_by_key(|(ts, _)| *ts);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::DuplicateTimestamp(w[0].0));
    }
    let timestamps = rows.iter().map(|(t, _)| *t).collect();
    let columns = wanted
        .into_iter()
        .enumerate()
        .map(|(j, name)| (name, rows.iter().map(|(_, v)| v[j]).collect()))
        .collect();
    TimeSeriesFrame::new(timestamps, columns)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Accepts ISO-8601 date-times (with or without seconds, `T` or space
/// separated, optional offset which is dropped), bare dates, and epoch seconds.
pub fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Ok(secs) = raw.parse::<i64>() {
        return DateTime::from_timestamp(secs, 0).map(|d| d.naive_utc());
    }
    if let Ok(secs) = raw.parse::<f64>() {
        if !secs.is_finite() {
            return None;
        }
        let whole = secs.floor();
        let nanos = ((secs - whole) * 1e9).round() as u32;
        return DateTime::from_timestamp(whole as i64, nanos.min(999_999_999)).map(|d| d.naive_utc());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

pub fn write_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>, timestamp_column: &str) -> Result<()> {
    let file = File::create(path)?;
    write_csv_to(frame, file, timestamp_column)
}

/// Writes the frame with a header row; missing values are empty cells.
pub fn write_csv_to<W: Write>(frame: &TimeSeriesFrame, writer: W, timestamp_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![timestamp_column.to_string()];
    header.extend(frame.names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, ts) in frame.timestamps.iter().enumerate() {
        let mut record = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        record.extend(frame.columns.iter().map(|c| c[i].map(|v| v.to_string()).unwrap_or_default()));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Replaces every missing value by the most recent present one.
pub fn forward_fill(frame: &TimeSeriesFrame, column: &str) -> Result<TimeSeriesFrame> {
    let col = frame.column(column)?;
    if col.first().is_some_and(|v| v.is_none()) {
        return Err(DataError::LeadingGap(column.to_string()));
    }
    let mut last = None;
    let filled = col
        .iter()
        .map(|v| {
            if v.is_some() {
                last = *v;
            }
            last
        })
        .collect();
    frame.with_column(column, filled)
}

/// Re-indexes the frame onto the on-the-hour grid between its first and
/// last timestamps. Grid points absent from the input are missing.
pub fn resample_hourly(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let (Some(&first), Some(&last)) = (frame.timestamps.first(), frame.timestamps.last()) else {
        return Ok(frame.clone());
    };
    let floor_hour = |t: Timestamp| t.with_minute(0).and_then(|t| t.with_second(0)).and_then(|t| t.with_nanosecond(0));
    let first_floor = floor_hour(first).expect("valid hour");
    let start = if first_floor == first { first } else { first_floor + TimeDelta::hours(1) };
    let end = floor_hour(last).expect("valid hour");

    let mut grid = Vec::new();
    let mut t = start;
    while t <= end {
        grid.push(t);
        t += TimeDelta::hours(1);
    }
    // Both sequences are sorted, so a single merge pass aligns them.
    let mut source_row = Vec::with_capacity(grid.len());
    let mut i = 0;
    for g in &grid {
        while i < frame.len() && frame.timestamps[i] < *g {
            i += 1;
        }
        source_row.push((i < frame.len() && frame.timestamps[i] == *g).then_some(i));
    }
    let columns = frame
        .names
        .iter()
        .zip(&frame.columns)
        .map(|(name, col)| (name.clone(), source_row.iter().map(|r| r.and_then(|r| col[r])).collect()))
        .collect();
    let inserted = source_row.iter().filter(|r| r.is_none()).count();
    if inserted > 0 {
        log::info!("hourly grid has {} rows, {} without a source reading", grid.len(), inserted);
    }
    TimeSeriesFrame::new(grid, columns)
}

/// Chronological train/test split; the boundary is `floor(train_fraction * n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DataError::InvalidFraction(train_fraction));
        }
        Ok(Self { train_fraction })
    }

    pub fn boundary(&self, n: usize) -> Result<usize> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidFraction(self.train_fraction));
        }
        let boundary = (self.train_fraction * n as f64).floor() as usize;
        if boundary == 0 || boundary >= n {
            return Err(DataError::DegenerateSplit { boundary, n });
        }
        Ok(boundary)
    }
}

pub fn chronological_split(frame: &TimeSeriesFrame, spec: SplitSpec) -> Result<(TimeSeriesFrame, TimeSeriesFrame)> {
    let n = frame.len();
    if n < MIN_SPLIT_ROWS {
        return Err(DataError::TooFewRows { got: n, min: MIN_SPLIT_ROWS });
    }
    let boundary = spec.boundary(n)?;
    Ok((frame.slice_rows(0..boundary), frame.slice_rows(boundary..n)))
}

/// Per-column z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    Some((mean, if std < STD_FLOOR { STD_FLOOR } else { std }))
}

impl Scaler {
    /// Fits on the present values of each named column.
    pub fn fit(frame: &TimeSeriesFrame, columns: &[&str]) -> Result<Self> {
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for &c in columns {
            let (m, s) = mean_std(frame.column(c)?.iter().flatten().copied())
                .ok_or_else(|| DataError::MissingValues(c.to_string()))?;
            mean.push(m);
            std.push(s);
        }
        Ok(Self { columns: columns.iter().map(|c| c.to_string()).collect(), mean, std })
    }

    /// Fits one entry per matrix column. Panics on an empty matrix.
    pub fn fit_matrix(x: ArrayView2<f64>, names: &[String]) -> Self {
        assert!(x.nrows() > 0, "cannot fit a scaler on zero rows");
        let (mean, std) = x
            .axis_iter(Axis(1))
            .map(|col| mean_std(col.iter().copied()).expect("non-empty"))
            .unzip();
        Self { columns: names.to_vec(), mean, std }
    }

    /// Single-series scaler.
    pub fn fit_vector(name: &str, y: &[f64]) -> Self {
        let (m, s) = mean_std(y.iter().copied()).expect("cannot fit a scaler on zero values");
        Self { columns: vec![name.to_string()], mean: vec![m], std: vec![s] }
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn inverse_value(&self, j: usize, v: f64) -> f64 {
        v * self.std[j] + self.mean[j]
    }

    pub fn transform_matrix(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.transform_value(j, v));
        }
        out
    }

    pub fn inverse_matrix(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.inverse_value(j, v));
        }
        out
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, |s, j, v| s.transform_value(j, v))
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, |s, j, v| s.inverse_value(j, v))
    }

    fn map_frame(&self, frame: &TimeSeriesFrame, f: impl Fn(&Self, usize, f64) -> f64) -> Result<TimeSeriesFrame> {
        let mut out = frame.clone();
        for (j, name) in self.columns.iter().enumerate() {
            let col = frame.column(name)?.iter().map(|v| v.map(|x| f(self, j, x))).collect();
            out = out.with_column(name, col)?;
        }
        Ok(out)
    }
}
