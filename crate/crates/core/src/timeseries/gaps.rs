//! Gap handling: restore the hourly grid and fill short runs of missing
//! values.

use chrono::Duration;

use super::{
    DataError, MonitoringSample, Series, Value, COVARIATE_CHANNELS, COV_WIND_DIR, TARGET_CHANNELS,
};

/// Policy for missing stretches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    /// Linearly interpolate runs of up to `max_gap_hours` missing values
    /// between two present neighbours.
    LinearInterpolate { max_gap_hours: u32 },
    /// Repeat the last present value across runs of up to `max_gap_hours`.
    CarryForward { max_gap_hours: u32 },
    /// Fill nothing; windows overlapping a gap are dropped downstream.
    DropWindow,
}

/// Restores the constant 1-hour grid and fills short gaps per `policy`.
///
/// Filled values are marked [`Value::Filled`] so they can serve as window
/// inputs but never as labels. Runs longer than the policy horizon, and runs
/// touching the series boundary without both neighbours (one neighbour for
/// carry-forward's leading edge), stay missing. The operation is idempotent.
pub fn fill_gaps(series: &Series, policy: GapPolicy) -> Result<Series, DataError> {
    if series.len() < 2 {
        return Err(DataError::SeriesTooShort {
            needed: 2,
            found: series.len(),
        });
    }
    match policy {
        GapPolicy::LinearInterpolate { max_gap_hours } | GapPolicy::CarryForward { max_gap_hours }
            if max_gap_hours < 1 =>
        {
            return Err(DataError::InvalidMaxGap)
        }
        _ => {}
    }

    // Re-grid: insert fully missing samples at absent hours.
    let mut samples: Vec<MonitoringSample> = Vec::with_capacity(series.len());
    let existing = series.samples();
    let mut cursor = existing[0].timestamp;
    let mut idx = 0;
    while idx < existing.len() {
        if existing[idx].timestamp == cursor {
            samples.push(existing[idx].clone());
            idx += 1;
        } else {
            samples.push(MonitoringSample::empty(cursor));
        }
        cursor += Duration::hours(1);
    }

    let (max_gap, interpolate) = match policy {
        GapPolicy::LinearInterpolate { max_gap_hours } => (max_gap_hours as usize, true),
        GapPolicy::CarryForward { max_gap_hours } => (max_gap_hours as usize, false),
        GapPolicy::DropWindow => {
            return Series::new(samples, series.provenance());
        }
    };

    let n = samples.len();
    for channel in 0..TARGET_CHANNELS + COVARIATE_CHANNELS {
        let get = |s: &MonitoringSample| -> Value {
            if channel < TARGET_CHANNELS {
                s.targets[channel]
            } else {
                s.covariates[channel - TARGET_CHANNELS]
            }
        };
        let circular = channel == TARGET_CHANNELS + COV_WIND_DIR;

        let mut i = 0;
        while i < n {
            if get(&samples[i]).is_present() {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < n && !get(&samples[i]).is_present() {
                i += 1;
            }
            let run_end = i; // exclusive
            let run_len = run_end - run_start;
            if run_len > max_gap {
                continue;
            }
            let left = run_start.checked_sub(1).and_then(|j| get(&samples[j]).get());
            let right = if run_end < n { get(&samples[run_end]).get() } else { None };

            let fill_at = |pos: usize| -> Option<f64> {
                if interpolate {
                    let (l, r) = (left?, right?);
                    let frac = (pos - run_start + 1) as f64 / (run_len + 1) as f64;
                    Some(if circular {
                        // shortest-arc interpolation for wind direction
                        let delta = (r - l + 540.0).rem_euclid(360.0) - 180.0;
                        (l + delta * frac).rem_euclid(360.0)
                    } else {
                        l + (r - l) * frac
                    })
                } else {
                    left
                }
            };

            for pos in run_start..run_end {
                if let Some(v) = fill_at(pos) {
                    let sample = &mut samples[pos];
                    if channel < TARGET_CHANNELS {
                        sample.targets[channel] = Value::Filled(v);
                    } else {
                        sample.covariates[channel - TARGET_CHANNELS] = Value::Filled(v);
                    }
                }
            }
        }
    }

    Series::new(samples, series.provenance())
}
