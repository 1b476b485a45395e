//! Design-matrix construction: calendar encodings, lags, trailing rolling
//! statistics and an optional degree-2 polynomial expansion.
//!
//! Every feature at row `t` depends only on values strictly before `t` or
//! on the timestamp of row `t`, so rows are causal by construction.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use chrono::{Datelike, Timelike};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, TimeSeriesFrame, Timestamp, TIMESTAMP_FORMAT};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("lag must be positive")]
    ZeroLag,
    #[error("lag {lag} is not shorter than the series length {n}")]
    LagExceedsLength { lag: usize, n: usize },
    #[error("rolling window must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("polynomial degree {0} is not supported (1 or 2)")]
    UnsupportedDegree(u32),
    #[error("warmup of {warmup} rows leaves nothing of a {n}-row series")]
    WarmupExceedsLength { warmup: usize, n: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub lags: Vec<usize>,
    pub rolling_windows: Vec<usize>,
    pub hour_of_day: bool,
    pub day_of_week: bool,
    /// Month-of-year sin/cos pair.
    #[serde(default)]
    pub month_of_year: bool,
    /// `momentum_k[t] = y[t-1] - y[t-1-k]`.
    #[serde(default)]
    pub momentum: Vec<usize>,
    pub polynomial_degree: u32,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            lags: vec![1, 24, 168],
            rolling_windows: vec![24, 168],
            hour_of_day: true,
            day_of_week: true,
            month_of_year: false,
            momentum: Vec::new(),
            polynomial_degree: 1,
        }
    }
}

impl FeatureSpec {
    /// Default set plus extra lags, a month encoding and momentum terms.
    pub fn enriched() -> Self {
        Self {
            lags: vec![1, 2, 3, 24, 48, 168],
            month_of_year: true,
            momentum: vec![1, 24],
            ..Self::default()
        }
    }

    /// Rows consumed before every feature is defined.
    pub fn warmup(&self) -> usize {
        self.lags
            .iter()
            .chain(&self.rolling_windows)
            .copied()
            .chain(self.momentum.iter().map(|k| k + 1))
            .max()
            .unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.lags.contains(&0) || self.momentum.contains(&0) {
            return Err(FeatureError::ZeroLag);
        }
        if let Some(&w) = self.rolling_windows.iter().find(|&&w| w < 2) {
            return Err(FeatureError::WindowTooSmall(w));
        }
        if !(1..=2).contains(&self.polynomial_degree) {
            return Err(FeatureError::UnsupportedDegree(self.polynomial_degree));
        }
        Ok(())
    }
}

/// Engineered design matrix with its aligned target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_names: Vec<String>,
    /// Source-frame row of the first matrix row.
    pub origin_index: usize,
    pub timestamps: Vec<Timestamp>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    /// Source-frame row range covered by the matrix.
    pub fn source_rows(&self) -> Range<usize> {
        self.origin_index..self.origin_index + self.rows()
    }

    /// Sub-matrix of matrix rows `rows`.
    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        Self {
            x: self.x.slice(s![rows.clone(), ..]).to_owned(),
            y: self.y.slice(s![rows.clone()]).to_owned(),
            feature_names: self.feature_names.clone(),
            origin_index: self.origin_index + rows.start,
            timestamps: self.timestamps[rows].to_vec(),
        }
    }

    /// Sub-matrix of the rows whose source index falls in `source`.
    pub fn slice_source_rows(&self, source: Range<usize>) -> Self {
        let lo = source.start.clamp(self.origin_index, self.origin_index + self.rows()) - self.origin_index;
        let hi = source.end.clamp(self.origin_index, self.origin_index + self.rows()) - self.origin_index;
        self.slice_rows(lo..hi.max(lo))
    }

    pub fn column(&self, name: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.feature_names.iter().position(|n| n == name).map(|j| self.x.column(j))
    }

    /// SHA-256 over names, timestamps, matrix and target bit patterns.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.feature_names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for t in &self.timestamps {
            h.update(t.and_utc().timestamp().to_le_bytes());
        }
        for v in self.x.iter().chain(self.y.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Hash of timestamps and target only.
    pub fn target_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.timestamps {
            h.update(t.and_utc().timestamp().to_le_bytes());
        }
        for v in &self.y {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// CSV with header `timestamp, features..., target_name`.
    pub fn write_csv<W: Write>(&self, writer: W, target_name: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push(target_name.to_string());
        wtr.write_record(&header)?;
        for (i, row) in self.x.axis_iter(Axis(0)).enumerate() {
            let mut record = vec![self.timestamps[i].format(TIMESTAMP_FORMAT).to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(self.y[i].to_string());
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub type Column = (String, Vec<Option<f64>>);

/// `hour_sin, hour_cos, dow_sin, dow_cos`; Monday is day 0.
pub fn cyclic_encode(timestamps: &[Timestamp]) -> [Column; 4] {
    let hour = |t: &Timestamp| t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
    let dow = |t: &Timestamp| t.weekday().num_days_from_monday() as f64;
    let col = |name: &str, f: &dyn Fn(&Timestamp) -> f64| -> Column {
        (name.to_string(), timestamps.iter().map(|t| Some(f(t))).collect())
    };
    [
        col("hour_sin", &|t| (2.0 * PI * hour(t) / 24.0).sin()),
        col("hour_cos", &|t| (2.0 * PI * hour(t) / 24.0).cos()),
        col("dow_sin", &|t| (2.0 * PI * dow(t) / 7.0).sin()),
        col("dow_cos", &|t| (2.0 * PI * dow(t) / 7.0).cos()),
    ]
}

fn month_encode(timestamps: &[Timestamp]) -> [Column; 2] {
    let month = |t: &Timestamp| t.month0() as f64;
    [
        ("month_sin".into(), timestamps.iter().map(|t| Some((2.0 * PI * month(t) / 12.0).sin())).collect()),
        ("month_cos".into(), timestamps.iter().map(|t| Some((2.0 * PI * month(t) / 12.0).cos())).collect()),
    ]
}

/// `lag_k[t] = values[t - k]`, missing for `t < k`.
pub fn make_lags(values: &[f64], lags: &[usize]) -> Result<Vec<Column>> {
    lags.iter()
        .map(|&k| {
            if k == 0 {
                return Err(FeatureError::ZeroLag);
            }
            if k >= values.len() {
                return Err(FeatureError::LagExceedsLength { lag: k, n: values.len() });
            }
            let col = (0..values.len()).map(|t| t.checked_sub(k).map(|s| values[s])).collect();
            Ok((format!("lag_{k}"), col))
        })
        .collect()
}

/// Trailing mean and population std over `values[t - window .. t]`
/// (the current row excluded); missing until `window` past values exist.
pub fn rolling_stats(values: &[f64], window: usize) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
    if window < 2 {
        return Err(FeatureError::WindowTooSmall(window));
    }
    let n = values.len();
    let mut mean = vec![None; n];
    let mut std = vec![None; n];
    // Centering on the first value keeps the running sums small without
    // looking ahead.
    let center = values.first().copied().unwrap_or(0.0);
    let w = window as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for t in 0..n {
        if t >= window {
            let m = sum / w;
            mean[t] = Some(m + center);
            std[t] = Some((sum_sq / w - m * m).max(0.0).sqrt());
        }
        let c = values[t] - center;
        sum += c;
        sum_sq += c * c;
        if t >= window {
            let old = values[t - window] - center;
            sum -= old;
            sum_sq -= old * old;
        }
    }
    Ok((mean, std))
}

fn momentum(values: &[f64], k: usize) -> Column {
    let col = (0..values.len()).map(|t| (t > k).then(|| values[t - 1] - values[t - 1 - k])).collect();
    (format!("momentum_{k}"), col)
}

/// Degree 1 is the identity; degree 2 appends squares (`a^2`) and pairwise
/// products (`a*b`, pairs in index order).
pub fn polynomial_expand(x: ArrayView2<f64>, names: &[String], degree: u32) -> Result<(Array2<f64>, Vec<String>)> {
    match degree {
        1 => Ok((x.to_owned(), names.to_vec())),
        2 => {
            let k = x.ncols();
            let mut out_names = names.to_vec();
            out_names.extend(names.iter().map(|n| format!("{n}^2")));
            let mut pairs = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    pairs.push((i, j));
                    out_names.push(format!("{}*{}", names[i], names[j]));
                }
            }
            let mut out = Array2::zeros((x.nrows(), out_names.len()));
            out.slice_mut(s![.., ..k]).assign(&x);
            for j in 0..k {
                let sq = x.column(j).mapv(|v| v * v);
                out.column_mut(k + j).assign(&sq);
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let prod = &x.column(i) * &x.column(j);
                out.column_mut(2 * k + p).assign(&prod);
            }
            Ok((out, out_names))
        }
        d => Err(FeatureError::UnsupportedDegree(d)),
    }
}

/// Assembles the feature columns named by `spec` and drops the warmup rows.
pub fn build_features(frame: &TimeSeriesFrame, target: &str, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let values = frame.values(target)?;
    let n = values.len();
    let warmup = spec.warmup();
    if warmup >= n {
        return Err(FeatureError::WarmupExceedsLength { warmup, n });
    }

    let mut columns: Vec<Column> = Vec::new();
    let cyclic = cyclic_encode(frame.timestamps());
    if spec.hour_of_day {
        columns.extend(cyclic[..2].iter().cloned());
    }
    if spec.day_of_week {
        columns.extend(cyclic[2..].iter().cloned());
    }
    if spec.month_of_year {
        columns.extend(month_encode(frame.timestamps()));
    }
    columns.extend(make_lags(&values, &spec.lags)?);
    for &w in &spec.rolling_windows {
        let (mean, std) = rolling_stats(&values, w)?;
        columns.push((format!("roll_mean_{w}"), mean));
        columns.push((format!("roll_std_{w}"), std));
    }
    for &k in &spec.momentum {
        columns.push(momentum(&values, k));
    }

    let rows = n - warmup;
    let mut x = Array2::zeros((rows, columns.len()));
    for (j, (name, col)) in columns.iter().enumerate() {
        for (i, v) in col[warmup..].iter().enumerate() {
            x[[i, j]] = v.unwrap_or_else(|| panic!("{name} undefined after warmup"));
        }
    }
    let names: Vec<String> = columns.into_iter().map(|(n, _)| n).collect();
    let (x, feature_names) = polynomial_expand(x.view(), &names, spec.polynomial_degree)?;
    Ok(FeatureMatrix {
        x,
        y: Array1::from(values[warmup..].to_vec()),
        feature_names,
        origin_index: warmup,
        timestamps: frame.timestamps()[warmup..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stamps(n: usize) -> Vec<Timestamp> {
        // 2024-01-01 is a Monday
        let t0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n as i64).map(|h| t0 + TimeDelta::hours(h)).collect()
    }

    fn hourly_frame(values: Vec<f64>) -> TimeSeriesFrame {
        TimeSeriesFrame::from_values(stamps(values.len()), vec![("y".into(), values)]).unwrap()
    }

    #[test]
    fn cyclic_angles() {
        let enc = cyclic_encode(&stamps(30));
        let (hs, hc) = (&enc[0].1, &enc[1].1);
        assert_eq!((hs[0].unwrap(), hc[0].unwrap()), (0.0, 1.0));
        assert!((hs[6].unwrap() - 1.0).abs() < 1e-15 && hc[6].unwrap().abs() < 1e-15);
        for (s, c) in hs.iter().zip(hc) {
            assert!((s.unwrap().powi(2) + c.unwrap().powi(2) - 1.0).abs() < 1e-12);
        }
        // Monday -> day 0
        assert_eq!((enc[2].1[0].unwrap(), enc[3].1[0].unwrap()), (0.0, 1.0));
        assert!((enc[2].1[24].unwrap() - (2.0 * PI / 7.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn lag_examples() {
        let lags = make_lags(&[1.0, 2.0, 3.0], &[1]).unwrap();
        assert_eq!(lags[0].0, "lag_1");
        assert_eq!(lags[0].1, vec![None, Some(1.0), Some(2.0)]);
        let lags = make_lags(&[1.0, 2.0, 3.0, 4.0], &[2]).unwrap();
        assert_eq!(lags[0].1, vec![None, None, Some(1.0), Some(2.0)]);
        assert!(matches!(make_lags(&[1.0, 2.0], &[0]), Err(FeatureError::ZeroLag)));
        assert!(matches!(make_lags(&[1.0, 2.0], &[2]), Err(FeatureError::LagExceedsLength { lag: 2, n: 2 })));
    }

    #[test]
    fn rolling_examples() {
        let (mean, _) = rolling_stats(&[1.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert_eq!(mean, vec![None, None, None, Some(2.0)]);
        let (_, std) = rolling_stats(&[7.5; 10], 4).unwrap();
        assert!(std.iter().flatten().all(|&s| s == 0.0));
        assert_eq!(std.iter().flatten().count(), 6);
        assert!(matches!(rolling_stats(&[1.0; 5], 1), Err(FeatureError::WindowTooSmall(1))));
    }

    #[test]
    fn rolling_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..3000).map(|_| 50.0 + rng.random_range(-5.0..5.0)).collect();
        for w in [2, 24, 168] {
            let (mean, std) = rolling_stats(&values, w).unwrap();
            for t in w..values.len() {
                let win = &values[t - w..t];
                let m = win.iter().sum::<f64>() / w as f64;
                let sd = (win.iter().map(|v| (v - m).powi(2)).sum::<f64>() / w as f64).sqrt();
                assert!((mean[t].unwrap() - m).abs() < 1e-9);
                assert!((std[t].unwrap() - sd).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn polynomial_shapes() {
        let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let names = vec!["u".to_string(), "v".to_string()];
        let (same, n1) = polynomial_expand(x.view(), &names, 1).unwrap();
        assert_eq!((same, n1), (x.clone(), names.clone()));
        let (x2, n2) = polynomial_expand(x.view(), &names, 2).unwrap();
        assert_eq!(n2, vec!["u", "v", "u^2", "v^2", "u*v"]);
        assert_eq!(x2.row(1).to_vec(), vec![3.0, 4.0, 9.0, 16.0, 12.0]);
        for k in 1..7 {
            let xk = Array2::<f64>::zeros((1, k));
            let nk: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            assert_eq!(polynomial_expand(xk.view(), &nk, 2).unwrap().0.ncols(), 2 * k + k * (k - 1) / 2);
        }
        assert!(matches!(polynomial_expand(x.view(), &names, 3), Err(FeatureError::UnsupportedDegree(3))));
    }

    #[test]
    fn default_spec_on_two_hundred_rows() {
        let f = hourly_frame((0..200).map(|i| (i as f64 * 0.1).sin()).collect());
        let fm = build_features(&f, "y", &FeatureSpec::default()).unwrap();
        assert_eq!(fm.rows(), 32);
        assert_eq!(
            fm.feature_names,
            vec![
                "hour_sin", "hour_cos", "dow_sin", "dow_cos", "lag_1", "lag_24", "lag_168", "roll_mean_24",
                "roll_std_24", "roll_mean_168", "roll_std_168"
            ]
        );
        assert_eq!(fm.origin_index, 168);
        assert!(fm.x.iter().chain(fm.y.iter()).all(|v| v.is_finite()));
        assert_eq!(fm.y[0], f.values("y").unwrap()[168]);
        assert_eq!(fm.column("lag_168").unwrap()[0], f.values("y").unwrap()[0]);
    }

    #[test]
    fn single_lag_spec() {
        let spec = FeatureSpec { lags: vec![1], rolling_windows: vec![], ..FeatureSpec::default() };
        let fm = build_features(&hourly_frame((0..10).map(f64::from).collect()), "y", &spec).unwrap();
        assert_eq!(fm.rows(), 9);
        assert_eq!(fm.cols(), 5);
    }

    #[test]
    fn warmup_longer_than_series() {
        let err = build_features(&hourly_frame(vec![1.0; 100]), "y", &FeatureSpec::default()).unwrap_err();
        assert!(matches!(err, FeatureError::WarmupExceedsLength { warmup: 168, n: 100 }));
    }

    #[test]
    fn causality_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let spec = FeatureSpec::enriched();
        let base = build_features(&hourly_frame(values.clone()), "y", &spec).unwrap();
        for t in [170, 250, 399] {
            let mut perturbed = values.clone();
            perturbed[t] += 100.0;
            let fm = build_features(&hourly_frame(perturbed), "y", &spec).unwrap();
            let row = t - base.origin_index;
            // features at rows <= t are unchanged; only y[t] differs
            assert_eq!(fm.x.slice(s![..=row, ..]), base.x.slice(s![..=row, ..]));
            assert_eq!(fm.y.slice(s![..row]), base.y.slice(s![..row]));
        }
    }

    #[test]
    fn deterministic_and_exportable() {
        let f = hourly_frame((0..300).map(|i| (i % 17) as f64).collect());
        let spec = FeatureSpec { polynomial_degree: 2, ..FeatureSpec::default() };
        let a = build_features(&f, "y", &spec).unwrap();
        let b = build_features(&f, "y", &spec).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.cols(), 11 + 11 + 55);
        let mut buf = Vec::new();
        a.write_csv(&mut buf, "y").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), a.rows() + 1);
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("timestamp,hour_sin,hour_cos,"));
        assert!(header.contains(",roll_std_168^2,hour_sin*hour_cos,"));
        assert!(header.ends_with(",roll_mean_168*roll_std_168,y"));
    }
}
