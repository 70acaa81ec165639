//! Data model for hourly structural monitoring series.
//!
//! A [`Series`] is an ordered run of [`MonitoringSample`]s at a fixed 1-hour
//! step: five natural-frequency targets, six environmental covariates, and
//! three calendar fingerprints per sample. Values can be missing; gap filling
//! marks synthesized values so they are never mistaken for observations.

mod gaps;
mod ingest;
mod stats;
mod window;

pub use gaps::{fill_gaps, GapPolicy};
pub use ingest::{parse_csv, write_csv, CSV_HEADER};
pub use stats::{compute_stats, NormStats, CONTINUOUS_FEATURES};
pub use window::{build_windows, Window};

use chrono::{DateTime, Datelike, Timelike, Utc};
use thiserror::Error;

/// Number of tracked natural-frequency channels.
pub const TARGET_CHANNELS: usize = 5;
/// Number of raw environmental covariate columns.
pub const COVARIATE_CHANNELS: usize = 6;

/// Covariate column indices within [`MonitoringSample::covariates`].
pub const COV_TEMP: usize = 0;
pub const COV_RAIN: usize = 1;
pub const COV_HUMIDITY: usize = 2;
pub const COV_WIND_AVG: usize = 3;
pub const COV_WIND_PEAK: usize = 4;
pub const COV_WIND_DIR: usize = 5;

/// Target channel names, in column order.
pub const TARGET_NAMES: [&str; TARGET_CHANNELS] = ["f1", "f2", "f3", "f4", "f5"];
/// Covariate column names, in column order.
pub const COVARIATE_NAMES: [&str; COVARIATE_CHANNELS] = [
    "temp_c",
    "rain_mm",
    "humidity_pct",
    "wind_avg_ms",
    "wind_peak_ms",
    "wind_dir_deg",
];

/// Errors from data-model construction and ingestion.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(DateTime<Utc>),
    #[error("line {line}: timestamp {timestamp} is not on the hourly grid")]
    NonHourlyTimestamp { line: u64, timestamp: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("series must contain at least {needed} samples, found {found}")]
    SeriesTooShort { needed: usize, found: usize },
    #[error("gap-fill horizon must be at least 1 hour")]
    InvalidMaxGap,
    #[error("window length must be at least 2, got {0}")]
    InvalidWindowLength(usize),
    #[error("timestamps not strictly increasing at {0}")]
    NonIncreasingTimestamps(DateTime<Utc>),
    #[error("channel `{0}` is constant over the requested range")]
    DegenerateChannel(String),
    #[error("range contains fewer than 2 observed values for channel `{0}`")]
    InsufficientRange(String),
    #[error("invalid range: start {start} is not before end {end}")]
    InvalidRange {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One measured or synthesized cell in the series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    /// No value available.
    Missing,
    /// A genuine instrument observation.
    Observed(f64),
    /// A value synthesized by gap filling; usable as model input, never as a
    /// prediction label.
    Filled(f64),
}

impl Value {
    pub fn get(self) -> Option<f64> {
        match self {
            Value::Missing => None,
            Value::Observed(v) | Value::Filled(v) => Some(v),
        }
    }

    pub fn is_present(self) -> bool {
        !matches!(self, Value::Missing)
    }

    pub fn is_observed(self) -> bool {
        matches!(self, Value::Observed(_))
    }
}

/// Calendar fingerprints conditioning the forecaster on periodic patterns.
///
/// Hour is 1-24 (hour-of-day + 1), day is day-of-month 1-31, month is 1-12.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprints {
    pub hour: u8,
    pub day: u8,
    pub month: u8,
}

/// Maps an hourly timestamp to its calendar fingerprints.
pub fn fingerprint(timestamp: DateTime<Utc>) -> Fingerprints {
    Fingerprints {
        hour: timestamp.hour() as u8 + 1,
        day: timestamp.day() as u8,
        month: timestamp.month() as u8,
    }
}

/// One hourly observation: five frequency targets, six covariates, and the
/// calendar fingerprints derived from the timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringSample {
    pub timestamp: DateTime<Utc>,
    pub targets: [Value; TARGET_CHANNELS],
    pub covariates: [Value; COVARIATE_CHANNELS],
    pub fingerprints: Fingerprints,
}

impl MonitoringSample {
    /// Builds a sample, validating domain invariants on every present value.
    pub fn new(
        timestamp: DateTime<Utc>,
        targets: [Value; TARGET_CHANNELS],
        covariates: [Value; COVARIATE_CHANNELS],
    ) -> Result<Self, String> {
        if timestamp.minute() != 0 || timestamp.second() != 0 || timestamp.nanosecond() != 0 {
            return Err(format!("timestamp {timestamp} is not on the hourly grid"));
        }
        for (c, v) in targets.iter().enumerate() {
            if let Some(x) = v.get() {
                if !x.is_finite() || x <= 0.0 {
                    return Err(format!(
                        "{} must be finite and strictly positive, got {x}",
                        TARGET_NAMES[c]
                    ));
                }
            }
        }
        for (c, v) in covariates.iter().enumerate() {
            if let Some(x) = v.get() {
                if !x.is_finite() {
                    return Err(format!("{} must be finite", COVARIATE_NAMES[c]));
                }
                let ok = match c {
                    COV_RAIN | COV_WIND_AVG | COV_WIND_PEAK => x >= 0.0,
                    COV_HUMIDITY => (0.0..=100.0).contains(&x),
                    COV_WIND_DIR => (0.0..360.0).contains(&x),
                    _ => true,
                };
                if !ok {
                    return Err(format!("{} out of domain: {x}", COVARIATE_NAMES[c]));
                }
            }
        }
        if let (Some(avg), Some(peak)) = (
            covariates[COV_WIND_AVG].get(),
            covariates[COV_WIND_PEAK].get(),
        ) {
            if peak < avg {
                return Err(format!("wind peak {peak} below average {avg}"));
            }
        }
        Ok(Self {
            timestamp,
            targets,
            covariates,
            fingerprints: fingerprint(timestamp),
        })
    }

    /// A fully missing placeholder at the given hour (used to restore the
    /// hourly grid across gaps).
    pub fn empty(timestamp: DateTime<Utc>) -> Self {
        Self {
            timestamp,
            targets: [Value::Missing; TARGET_CHANNELS],
            covariates: [Value::Missing; COVARIATE_CHANNELS],
            fingerprints: fingerprint(timestamp),
        }
    }

    /// True if every target and covariate carries a value (observed or filled).
    pub fn fully_present(&self) -> bool {
        self.targets.iter().all(|v| v.is_present()) && self.covariates.iter().all(|v| v.is_present())
    }

    /// True if all five targets are genuine observations, making the sample
    /// usable as a prediction label.
    pub fn label_ready(&self) -> bool {
        self.targets.iter().all(|v| v.is_observed())
    }
}

/// Half-open timestamp interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, DataError> {
        if start >= end {
            return Err(DataError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.end
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && t < self.end
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Ordered hourly samples with fixed channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    samples: Vec<MonitoringSample>,
    provenance: String,
}

impl Series {
    /// Builds a series from samples already sorted by timestamp.
    ///
    /// Timestamps must be strictly increasing; a constant 1-hour grid is only
    /// guaranteed after [`fill_gaps`].
    pub fn new(samples: Vec<MonitoringSample>, provenance: impl Into<String>) -> Result<Self, DataError> {
        for pair in samples.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                if pair[1].timestamp == pair[0].timestamp {
                    return Err(DataError::DuplicateTimestamp(pair[1].timestamp));
                }
                return Err(DataError::NonIncreasingTimestamps(pair[1].timestamp));
            }
        }
        Ok(Self {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn samples(&self) -> &[MonitoringSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// True if consecutive timestamps are exactly one hour apart.
    pub fn has_uniform_grid(&self) -> bool {
        self.samples
            .windows(2)
            .all(|p| p[1].timestamp - p[0].timestamp == chrono::Duration::hours(1))
    }

    /// Index of the first sample with timestamp >= `t`.
    pub fn lower_bound(&self, t: DateTime<Utc>) -> usize {
        self.samples.partition_point(|s| s.timestamp < t)
    }

    /// Samples whose timestamps fall inside `range`.
    pub fn slice_range(&self, range: &TimeRange) -> &[MonitoringSample] {
        let lo = self.lower_bound(range.start());
        let hi = self.lower_bound(range.end());
        &self.samples[lo..hi]
    }

    /// A new series restricted to `range`, keeping provenance.
    pub fn restrict(&self, range: &TimeRange) -> Series {
        Series {
            samples: self.slice_range(range).to_vec(),
            provenance: self.provenance.clone(),
        }
    }
}
