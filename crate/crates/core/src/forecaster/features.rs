//! Per-timestep feature encoding: standardized targets and covariates plus
//! fingerprint indices for the embedding tables.

use ndarray::Array2;

use crate::timeseries::{
    MonitoringSample, NormStats, CONTINUOUS_FEATURES, COV_WIND_DIR, TARGET_CHANNELS,
};

use super::ModelError;

/// Encoded inputs for a run of samples: a row per timestep with the twelve
/// standardized continuous features, plus 0-based embedding indices for
/// (hour, day, month).
pub(crate) struct FeatureSet {
    pub continuous: Array2<f64>,
    pub fingerprints: Vec<[usize; 3]>,
}

pub(crate) fn build_features(
    samples: &[MonitoringSample],
    stats: &NormStats,
) -> Result<FeatureSet, ModelError> {
    let mut continuous = Array2::zeros((samples.len(), CONTINUOUS_FEATURES));
    let mut fingerprints = Vec::with_capacity(samples.len());

    for (i, sample) in samples.iter().enumerate() {
        let mut row = continuous.row_mut(i);
        for c in 0..TARGET_CHANNELS {
            let v = sample.targets[c].get().ok_or(ModelError::NonFiniteInput)?;
            row[c] = stats.standardize_target(c, v);
        }
        for f in 0..5 {
            let v = sample.covariates[f].get().ok_or(ModelError::NonFiniteInput)?;
            row[TARGET_CHANNELS + f] = stats.standardize_covariate(f, v);
        }
        let dir = sample.covariates[COV_WIND_DIR]
            .get()
            .ok_or(ModelError::NonFiniteInput)?
            .to_radians();
        row[TARGET_CHANNELS + 5] = stats.standardize_covariate(5, dir.cos());
        row[TARGET_CHANNELS + 6] = stats.standardize_covariate(6, dir.sin());

        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }

        let fp = sample.fingerprints;
        fingerprints.push([
            fp.hour as usize - 1,
            fp.day as usize - 1,
            fp.month as usize - 1,
        ]);
    }

    Ok(FeatureSet {
        continuous,
        fingerprints,
    })
}
