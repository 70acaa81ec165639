//! Sliding detection driver over an observation period.

use rayon::prelude::*;

use crate::forecaster::ModelState;
use crate::timeseries::{Series, Window, TARGET_CHANNELS};

use super::{score_point, AnomalyRecord, DetectError, DetectorConfig};

/// Runs the detector at every timestep of `series`.
///
/// A timestep is scored when the `T` preceding samples form a valid input
/// window and its own targets are genuine observations; otherwise an
/// unscored record marks the hole. Records are emitted in timestamp order
/// and are bit-identical regardless of the parallel evaluation strategy.
pub fn run_sliding(
    model: &ModelState,
    series: &Series,
    config: &DetectorConfig,
) -> Result<Vec<AnomalyRecord>, DetectError> {
    if config.window != model.config().window {
        return Err(DetectError::WindowMismatch {
            detector: config.window,
            model: model.config().window,
        });
    }
    let t = config.window;
    let samples = series.samples();
    let mean_frequencies: [f64; TARGET_CHANNELS] = model.stats().target_mean;

    let records: Result<Vec<AnomalyRecord>, DetectError> = (0..samples.len())
        .into_par_iter()
        .map(|end| {
            let timestamp = samples[end].timestamp;
            let window = Window::at(samples, end, t);
            let point = match window {
                Some(w) => {
                    let dist = model.forward(&w)?;
                    let observed = w.label_targets();
                    Some(score_point(&observed, &dist, config, &mean_frequencies)?)
                }
                None => None,
            };
            Ok(AnomalyRecord { timestamp, point })
        })
        .collect();
    records
}
