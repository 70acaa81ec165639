//! Percentile-band anomaly detection.
//!
//! An observation is anomalous on a channel when it falls strictly outside
//! the predicted band [pi_(100-p), pi_p]; boundary equality is normal. The
//! per-channel band exceedances, in Hz, combine into a weighted score using
//! the inverse training-mean frequency per channel, attenuating the
//! contribution of higher frequencies.

mod report;
mod sliding;

pub use report::{
    parse_plot_csv, parse_report_csv, plot_channel_csv, plot_rows, render_svg, write_report_csv,
    PlotRow, REPORT_HEADER,
};
pub use sliding::run_sliding;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::forecaster::ForecastDistribution;
use crate::timeseries::TARGET_CHANNELS;

/// Errors from detector configuration and scoring.
#[derive(Debug, Error)]
pub enum DetectError {
    #[error("percentile {0} is not representable by the modeled quantile levels (75, 90, 99)")]
    UnsupportedPercentile(u8),
    #[error("band is inverted: lower {lower} above upper {upper}")]
    InvertedBand { lower: f64, upper: f64 },
    #[error("channel mean frequency must be positive, got {0}")]
    NonPositiveMeanFrequency(f64),
    #[error("detector window {detector} does not match the model window {model}")]
    WindowMismatch { detector: usize, model: usize },
    #[error("bad report file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Model(#[from] crate::forecaster::ModelError),
}

/// The band percentile parameter p; only values matching a modeled quantile
/// level and its complement are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Percentile {
    P75,
    P90,
    P99,
}

impl Percentile {
    pub fn from_int(p: u8) -> Result<Self, DetectError> {
        match p {
            75 => Ok(Percentile::P75),
            90 => Ok(Percentile::P90),
            99 => Ok(Percentile::P99),
            other => Err(DetectError::UnsupportedPercentile(other)),
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            Percentile::P75 => 75,
            Percentile::P90 => 90,
            Percentile::P99 => 99,
        }
    }

    /// Indices of (lower, upper) levels within [`QUANTILE_LEVELS`].
    pub fn level_indices(self) -> (usize, usize) {
        match self {
            Percentile::P75 => (2, 4),
            Percentile::P90 => (1, 5),
            Percentile::P99 => (0, 6),
        }
    }

    /// The band bounds for one channel of a forecast, in Hz.
    pub fn band(self, dist: &ForecastDistribution, channel: usize) -> (f64, f64) {
        let (lo, hi) = self.level_indices();
        (
            dist.channels[channel].quantiles[lo],
            dist.channels[channel].quantiles[hi],
        )
    }
}

/// How channel deviations are weighted into the scalar score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreWeights {
    /// Divide each channel's deviation by its training-mean frequency.
    #[default]
    InverseMeanFrequency,
    /// Sum deviations unweighted.
    Uniform,
}

/// Detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub percentile: Percentile,
    /// Sliding window width T, in hours; must match the model window.
    pub window: usize,
    pub weights: ScoreWeights,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            percentile: Percentile::P99,
            window: 96,
            weights: ScoreWeights::InverseMeanFrequency,
        }
    }
}

/// One channel's band check at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelVerdict {
    /// 1-based channel id.
    pub channel: u8,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub violated: bool,
    /// Band exceedance in Hz; zero inside the band.
    pub deviation: f64,
}

/// Scored content of a record; absent on timesteps without a valid window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub verdicts: [ChannelVerdict; TARGET_CHANNELS],
    /// Predicted means per channel, in Hz (reported, unused by the rule).
    pub means: [f64; TARGET_CHANNELS],
    /// Predicted 1st percentile per channel, for plot emission.
    pub p01: [f64; TARGET_CHANNELS],
    /// Predicted 99th percentile per channel, for plot emission.
    pub p99: [f64; TARGET_CHANNELS],
    /// Inverse-frequency-weighted sum of deviations.
    pub score: f64,
    /// True if any channel violated its band.
    pub anomalous: bool,
}

/// Per-timestep detection outcome. Unscored timesteps (window warm-up, gap
/// shadows, missing observations) are reported explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyRecord {
    pub timestamp: DateTime<Utc>,
    pub point: Option<ScoredPoint>,
}

impl AnomalyRecord {
    pub fn scored(&self) -> bool {
        self.point.is_some()
    }

    pub fn anomalous(&self) -> bool {
        self.point.map(|p| p.anomalous).unwrap_or(false)
    }

    pub fn score(&self) -> f64 {
        self.point.map(|p| p.score).unwrap_or(0.0)
    }

    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            timestamp: self.timestamp,
            scored: self.scored(),
            anomalous: self.anomalous(),
            score: self.score(),
        }
    }
}

/// The evaluation-relevant slice of a record; reconstructable from an
/// anomaly report CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSummary {
    pub timestamp: DateTime<Utc>,
    pub scored: bool,
    pub anomalous: bool,
    pub score: f64,
}

/// Flags each channel whose observation falls strictly outside the band.
/// Boundary equality is not a violation.
pub fn detect_point(
    observed: &[f64; TARGET_CHANNELS],
    dist: &ForecastDistribution,
    p: Percentile,
) -> [bool; TARGET_CHANNELS] {
    let mut flags = [false; TARGET_CHANNELS];
    for c in 0..TARGET_CHANNELS {
        let (lower, upper) = p.band(dist, c);
        flags[c] = observed[c] < lower || observed[c] > upper;
    }
    flags
}

/// Band exceedance magnitude: zero inside [lower, upper], distance to the
/// nearest bound outside.
pub fn deviation(observed: f64, lower: f64, upper: f64) -> Result<f64, DetectError> {
    if lower > upper {
        return Err(DetectError::InvertedBand { lower, upper });
    }
    Ok((lower - observed).max(observed - upper).max(0.0))
}

/// Sum of per-channel deviations, each divided by the channel's (training)
/// mean frequency.
pub fn weighted_score(
    deviations: &[f64; TARGET_CHANNELS],
    mean_frequencies: &[f64; TARGET_CHANNELS],
) -> Result<f64, DetectError> {
    let mut score = 0.0;
    for c in 0..TARGET_CHANNELS {
        if mean_frequencies[c] <= 0.0 {
            return Err(DetectError::NonPositiveMeanFrequency(mean_frequencies[c]));
        }
        score += deviations[c] / mean_frequencies[c];
    }
    Ok(score)
}

/// Builds the scored point for one timestep from its forecast.
pub(crate) fn score_point(
    observed: &[f64; TARGET_CHANNELS],
    dist: &ForecastDistribution,
    config: &DetectorConfig,
    mean_frequencies: &[f64; TARGET_CHANNELS],
) -> Result<ScoredPoint, DetectError> {
    let flags = detect_point(observed, dist, config.percentile);
    let mut verdicts = [ChannelVerdict {
        channel: 0,
        observed: 0.0,
        lower: 0.0,
        upper: 0.0,
        violated: false,
        deviation: 0.0,
    }; TARGET_CHANNELS];
    let mut deviations = [0.0; TARGET_CHANNELS];
    for c in 0..TARGET_CHANNELS {
        let (lower, upper) = config.percentile.band(dist, c);
        let dev = deviation(observed[c], lower, upper)?;
        deviations[c] = dev;
        verdicts[c] = ChannelVerdict {
            channel: (c + 1) as u8,
            observed: observed[c],
            lower,
            upper,
            violated: flags[c],
            deviation: dev,
        };
    }
    let score = match config.weights {
        ScoreWeights::InverseMeanFrequency => weighted_score(&deviations, mean_frequencies)?,
        ScoreWeights::Uniform => deviations.iter().sum(),
    };
    let mut means = [0.0; TARGET_CHANNELS];
    let mut p01 = [0.0; TARGET_CHANNELS];
    let mut p99 = [0.0; TARGET_CHANNELS];
    for c in 0..TARGET_CHANNELS {
        means[c] = dist.channels[c].mean;
        p01[c] = dist.channels[c].quantiles[0];
        p99[c] = dist.channels[c].quantiles[6];
    }
    Ok(ScoredPoint {
        verdicts,
        means,
        p01,
        p99,
        score,
        anomalous: flags.iter().any(|&f| f),
    })
}
