//! Normalization statistics over a training range.

use serde::{Deserialize, Serialize};

use super::{DataError, Series, TimeRange, COVARIATE_NAMES, COV_WIND_DIR, TARGET_CHANNELS, TARGET_NAMES};

/// Number of continuous features after encoding: five targets, five plain
/// covariates, and wind direction as (cos, sin).
pub const CONTINUOUS_FEATURES: usize = 12;

/// Per-channel mean and standard deviation, computed on training data only.
///
/// Covariate statistics are over the encoded features: temperature, rain,
/// humidity, wind average, wind peak, wind-direction cosine and sine. The
/// circular wind direction is encoded before normalization to avoid the
/// 359-to-0 degree discontinuity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub target_mean: [f64; 5],
    pub target_std: [f64; 5],
    pub covariate_mean: [f64; 7],
    pub covariate_std: [f64; 7],
}

/// Encoded covariate feature names, matching [`NormStats`] covariate order.
pub const COVARIATE_FEATURE_NAMES: [&str; 7] = [
    "temp_c",
    "rain_mm",
    "humidity_pct",
    "wind_avg_ms",
    "wind_peak_ms",
    "wind_dir_cos",
    "wind_dir_sin",
];

impl NormStats {
    pub fn standardize_target(&self, channel: usize, v: f64) -> f64 {
        (v - self.target_mean[channel]) / self.target_std[channel]
    }

    pub fn destandardize_target(&self, channel: usize, z: f64) -> f64 {
        z * self.target_std[channel] + self.target_mean[channel]
    }

    pub fn standardize_covariate(&self, feature: usize, v: f64) -> f64 {
        (v - self.covariate_mean[feature]) / self.covariate_std[feature]
    }
}

/// Computes per-channel statistics over genuinely observed values in `range`.
///
/// Filled (synthetic) values are excluded so interpolation cannot bias the
/// scaling. Sample standard deviation uses the n-1 denominator.
pub fn compute_stats(series: &Series, range: &TimeRange) -> Result<NormStats, DataError> {
    let samples = series.slice_range(range);

    let mut target_mean = [0.0; 5];
    let mut target_std = [0.0; 5];
    for c in 0..TARGET_CHANNELS {
        let values: Vec<f64> = samples
            .iter()
            .filter_map(|s| observed(s.targets[c]))
            .collect();
        let (m, sd) = mean_std(&values, TARGET_NAMES[c])?;
        target_mean[c] = m;
        target_std[c] = sd;
    }

    let mut covariate_mean = [0.0; 7];
    let mut covariate_std = [0.0; 7];
    for f in 0..7 {
        let values: Vec<f64> = samples
            .iter()
            .filter_map(|s| match f {
                0..=4 => observed(s.covariates[f]),
                5 => observed(s.covariates[COV_WIND_DIR]).map(|d| d.to_radians().cos()),
                _ => observed(s.covariates[COV_WIND_DIR]).map(|d| d.to_radians().sin()),
            })
            .collect();
        let name = if f < 5 { COVARIATE_NAMES[f] } else { COVARIATE_FEATURE_NAMES[f] };
        let (m, sd) = mean_std(&values, name)?;
        covariate_mean[f] = m;
        covariate_std[f] = sd;
    }

    Ok(NormStats {
        target_mean,
        target_std,
        covariate_mean,
        covariate_std,
    })
}

fn observed(v: super::Value) -> Option<f64> {
    if v.is_observed() {
        v.get()
    } else {
        None
    }
}

fn mean_std(values: &[f64], name: &str) -> Result<(f64, f64), DataError> {
    if values.len() < 2 {
        return Err(DataError::InsufficientRange(name.to_string()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(DataError::DegenerateChannel(name.to_string()));
    }
    Ok((mean, std))
}
