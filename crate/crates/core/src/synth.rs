//! Seeded hourly generator with injected sudden and gradual level drift.
//!
//! `value(t) = base + daily + weekly + drift(t) + noise`, where the seasonal
//! terms follow the calendar (hour of day, hour of week from Monday 00:00).

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, TimeDelta, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TimeSeriesFrame, Timestamp};

pub const SYNTH_COLUMN: &str = "interest_rate";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("start {start} must precede end {end}")]
    InvalidRange { start: Timestamp, end: Timestamp },
    #[error("noise_std must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("event at {0} lies outside the series")]
    EventOutOfRange(Timestamp),
    #[error("gradual drift needs a duration of at least one hour")]
    InvalidDuration,
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    /// Step of `jump` from the event onward.
    Sudden { jump: f64 },
    /// Linear ramp from 0 to `total_shift` over `duration_hours`, then held.
    Gradual { total_shift: f64, duration_hours: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: DriftKind,
}

impl DriftEvent {
    pub fn sudden(at: Timestamp, jump: f64) -> Self {
        Self { at, kind: DriftKind::Sudden { jump } }
    }

    pub fn gradual(at: Timestamp, total_shift: f64, duration_hours: u32) -> Self {
        Self { at, kind: DriftKind::Gradual { total_shift, duration_hours } }
    }

    /// Drift contribution at time `t`.
    pub fn contribution(&self, t: Timestamp) -> f64 {
        let elapsed = (t - self.at).num_seconds() as f64 / 3600.0;
        if elapsed < 0.0 {
            return 0.0;
        }
        match self.kind {
            DriftKind::Sudden { jump } => jump,
            DriftKind::Gradual { total_shift, duration_hours } => total_shift * (elapsed / duration_hours as f64).min(1.0),
        }
    }
}

fn ts(y: i32, m: u32, d: u32, h: u32) -> Timestamp {
    NaiveDate::from_ymd_opt(y, m, d).and_then(|d| d.and_hms_opt(h, 0, 0)).expect("valid literal date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub start: Timestamp,
    pub end: Timestamp,
    pub base_level: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub noise_std: f64,
    pub events: Vec<DriftEvent>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start: ts(2020, 1, 1, 0),
            end: ts(2023, 12, 31, 23),
            base_level: 3.0,
            daily_amplitude: 0.3,
            weekly_amplitude: 0.2,
            noise_std: 0.15,
            events: vec![DriftEvent::gradual(ts(2021, 4, 1, 0), 1.0, 180 * 24), DriftEvent::sudden(ts(2023, 2, 1, 0), 2.0)],
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Default settings without drift events.
    pub fn stationary() -> Self {
        Self { events: Vec::new(), ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(SynthError::InvalidRange { start: self.start, end: self.end });
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SynthError::InvalidNoise(self.noise_std));
        }
        for e in &self.events {
            if e.at < self.start || e.at > self.end {
                return Err(SynthError::EventOutOfRange(e.at));
            }
            if matches!(e.kind, DriftKind::Gradual { duration_hours: 0, .. }) {
                return Err(SynthError::InvalidDuration);
            }
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        let hours = (self.end - self.start).num_hours();
        (0..=hours).map(|h| self.start + TimeDelta::hours(h)).collect()
    }

    fn seasonal(&self, t: Timestamp) -> f64 {
        let hour = t.hour() as f64;
        let week_hour = t.weekday().num_days_from_monday() as f64 * 24.0 + hour;
        self.daily_amplitude * (2.0 * PI * hour / 24.0).sin() + self.weekly_amplitude * (2.0 * PI * week_hour / 168.0).sin()
    }

    /// `value` with the seasonal terms removed.
    pub fn deseasonalize(&self, t: Timestamp, value: f64) -> f64 {
        value - self.seasonal(t)
    }
}

/// Hourly series from `start` to `end` inclusive in column `interest_rate`.
pub fn generate(config: &SynthConfig) -> Result<TimeSeriesFrame> {
    config.validate()?;
    let stamps = config.timestamps();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).map_err(|_| SynthError::InvalidNoise(config.noise_std))?;
    let values: Vec<f64> = stamps
        .iter()
        .map(|&t| {
            let drift: f64 = config.events.iter().map(|e| e.contribution(t)).sum();
            config.base_level + config.seasonal(t) + drift + noise.sample(&mut rng)
        })
        .collect();
    Ok(TimeSeriesFrame::from_values(stamps, vec![(SYNTH_COLUMN.to_string(), values)]).expect("hourly grid is valid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    #[serde(flatten)]
    pub event: DriftEvent,
    /// Row of the first affected timestamp.
    pub index: usize,
    /// Row where a gradual ramp saturates (clamped to the last row).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_index: Option<usize>,
}

/// Metadata written next to generated data: full config and true event rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub column: String,
    pub n: usize,
    pub config: SynthConfig,
    pub events: Vec<EventTruth>,
}

pub fn sidecar(config: &SynthConfig) -> Result<Sidecar> {
    config.validate()?;
    let n = config.timestamps().len();
    let row = |t: Timestamp| (((t - config.start).num_seconds() + 3599) / 3600) as usize;
    let events = config
        .events
        .iter()
        .map(|e| EventTruth {
            event: *e,
            index: row(e.at),
            end_index: match e.kind {
                DriftKind::Gradual { duration_hours, .. } => Some((row(e.at) + duration_hours as usize).min(n - 1)),
                DriftKind::Sudden { .. } => None,
            },
        })
        .collect();
    Ok(Sidecar { column: SYNTH_COLUMN.to_string(), n, config: config.clone(), events })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_span_has_35064_rows() {
        let f = generate(&SynthConfig::default()).unwrap();
        assert_eq!(f.len(), 35_064);
        assert_eq!(f.column_names(), [SYNTH_COLUMN]);
        assert!(f.is_hourly());
        let meta = sidecar(&SynthConfig::default()).unwrap();
        assert_eq!(meta.events[1].index, 27_048);
        assert_eq!(meta.events[0].end_index, Some(meta.events[0].index + 4320));
    }

    #[test]
    fn all_terms_off_is_constant() {
        let config = SynthConfig { daily_amplitude: 0.0, weekly_amplitude: 0.0, noise_std: 0.0, events: vec![], ..Default::default() };
        let v = generate(&config).unwrap().values(SYNTH_COLUMN).unwrap();
        assert!(v.iter().all(|&x| x == 3.0));
    }

    #[test]
    fn noiseless_step_is_exact_after_deseasonalizing() {
        let config = SynthConfig { noise_std: 0.0, events: vec![DriftEvent::sudden(ts(2022, 6, 1, 7), 2.0)], ..Default::default() };
        let f = generate(&config).unwrap();
        let v = f.values(SYNTH_COLUMN).unwrap();
        let k = sidecar(&config).unwrap().events[0].index;
        let t = f.timestamps();
        let d = config.deseasonalize(t[k], v[k]) - config.deseasonalize(t[k - 1], v[k - 1]);
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradual_ramp_saturates() {
        let e = DriftEvent::gradual(ts(2021, 1, 1, 0), 1.0, 10);
        assert_eq!(e.contribution(ts(2020, 12, 31, 23)), 0.0);
        assert_eq!(e.contribution(ts(2021, 1, 1, 5)), 0.5);
        assert_eq!(e.contribution(ts(2021, 1, 1, 10)), 1.0);
        assert_eq!(e.contribution(ts(2022, 1, 1, 0)), 1.0);
    }

    #[test]
    fn seeded_and_reproducible() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = generate(&SynthConfig::default().with_seed(43)).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn sudden_jump_size_recoverable_from_samples() {
        let config = SynthConfig::default();
        let f = generate(&config).unwrap();
        let v = f.values(SYNTH_COLUMN).unwrap();
        let k = 27_048;
        // four weeks either side: whole weekly cycles, so seasonality cancels
        let w = 4 * 168;
        let after: f64 = v[k..k + w].iter().sum::<f64>() / w as f64;
        let before: f64 = v[k - w..k].iter().sum::<f64>() / w as f64;
        let tol = 3.0 * config.noise_std / (w as f64).sqrt();
        assert!((after - before - 2.0).abs() < tol, "{}", after - before);
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig { end: ts(2019, 1, 1, 0), ..Default::default() };
        assert!(matches!(generate(&bad), Err(SynthError::InvalidRange { .. })));
        let bad = SynthConfig { noise_std: -1.0, ..Default::default() };
        assert_eq!(generate(&bad).unwrap_err(), SynthError::InvalidNoise(-1.0));
        let bad = SynthConfig { events: vec![DriftEvent::sudden(ts(2030, 1, 1, 0), 1.0)], ..Default::default() };
        assert!(matches!(generate(&bad), Err(SynthError::EventOutOfRange(_))));
        let bad = SynthConfig { events: vec![DriftEvent::gradual(ts(2021, 1, 1, 0), 1.0, 0)], ..Default::default() };
        assert_eq!(generate(&bad).unwrap_err(), SynthError::InvalidDuration);
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = SynthConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"kind\":\"sudden\""));
        assert_eq!(serde_json::from_str::<SynthConfig>(&text).unwrap(), c);
        let partial: SynthConfig = serde_json::from_str(r#"{"seed": 7, "noise_std": 0.3}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.events, SynthConfig::default().events);
    }
}
