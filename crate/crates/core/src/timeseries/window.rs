//! Sliding-window construction over a gap-filled series.

use chrono::{DateTime, Duration, Utc};

use super::{DataError, MonitoringSample, Series, TARGET_CHANNELS};

/// An input block of `T` consecutive fully-present samples plus the next
/// sample's observed targets as the prediction label.
#[derive(Debug, Clone, Copy)]
pub struct Window<'s> {
    inputs: &'s [MonitoringSample],
    label: &'s MonitoringSample,
}

impl<'s> Window<'s> {
    /// The window labelled by `samples[end]`, if the `len` samples before it
    /// form a valid input block and the label targets are all observed.
    pub fn at(samples: &'s [MonitoringSample], end: usize, len: usize) -> Option<Window<'s>> {
        if end >= samples.len() || !samples[end].label_ready() {
            return None;
        }
        if !valid_input_block(samples, end, len) {
            return None;
        }
        Some(Window {
            inputs: &samples[end - len..end],
            label: &samples[end],
        })
    }

    pub fn inputs(&self) -> &'s [MonitoringSample] {
        self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn label_timestamp(&self) -> DateTime<Utc> {
        self.label.timestamp
    }

    pub fn label_targets(&self) -> [f64; TARGET_CHANNELS] {
        let mut out = [0.0; TARGET_CHANNELS];
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.label.targets[c].get().expect("label targets observed");
        }
        out
    }
}

/// True if the `len` samples ending just before index `end` form a valid
/// input block: fully present and hourly contiguous with the sample at `end`.
pub(crate) fn valid_input_block(samples: &[MonitoringSample], end: usize, len: usize) -> bool {
    if end < len {
        return false;
    }
    let block = &samples[end - len..end];
    if !block.iter().all(|s| s.fully_present()) {
        return false;
    }
    let hour = Duration::hours(1);
    let mut prev = block[0].timestamp;
    for s in &block[1..] {
        if s.timestamp - prev != hour {
            return false;
        }
        prev = s.timestamp;
    }
    samples[end].timestamp - prev == hour
}

/// Enumerates every stride-1 window of length `window_len` whose inputs are
/// fully present and whose label targets are genuine observations.
///
/// A series shorter than `window_len + 1` yields an empty sequence. Windows
/// are ordered by label timestamp.
pub fn build_windows(series: &Series, window_len: usize) -> Result<Vec<Window<'_>>, DataError> {
    if window_len < 2 {
        return Err(DataError::InvalidWindowLength(window_len));
    }
    let samples = series.samples();
    let mut windows = Vec::new();
    if samples.len() < window_len + 1 {
        return Ok(windows);
    }
    for end in window_len..samples.len() {
        if let Some(w) = Window::at(samples, end, window_len) {
            windows.push(w);
        }
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{fingerprint, Value, COVARIATE_CHANNELS};
    use chrono::TimeZone;

    fn ts(h: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap() + Duration::hours(h)
    }

    fn full(h: i64) -> MonitoringSample {
        MonitoringSample {
            timestamp: ts(h),
            targets: [Value::Observed(1.0 + h as f64 * 0.01); TARGET_CHANNELS],
            covariates: [Value::Observed(5.0); COVARIATE_CHANNELS],
            fingerprints: fingerprint(ts(h)),
        }
    }

    fn series_of(n: i64) -> Series {
        Series::new((0..n).map(full).collect(), "t").unwrap()
    }

    /// Brute-force oracle: re-derives window validity sample by sample,
    /// independent of the incremental logic in `build_windows`.
    fn brute_force_count(series: &Series, t: usize) -> usize {
        let samples = series.samples();
        let mut count = 0;
        for end in 0..samples.len() {
            if end < t {
                continue;
            }
            let mut ok = samples[end].targets.iter().all(|v| v.is_observed());
            for i in end - t..end {
                ok &= samples[i].fully_present();
            }
            for i in end - t..end {
                ok &= samples[i + 1].timestamp - samples[i].timestamp == Duration::hours(1);
            }
            if ok {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn exact_length_yields_one_window() {
        let series = series_of(5);
        let windows = build_windows(&series, 4).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].label_timestamp(), ts(4));
    }

    #[test]
    fn count_is_n_minus_t() {
        let series = series_of(50);
        for t in [2usize, 5, 10] {
            let windows = build_windows(&series, t).unwrap();
            assert_eq!(windows.len(), 50 - t);
        }
    }

    #[test]
    fn label_follows_last_input_by_one_hour() {
        let series = series_of(30);
        for w in build_windows(&series, 6).unwrap() {
            let last_input = w.inputs().last().unwrap().timestamp;
            assert_eq!(w.label_timestamp(), last_input + Duration::hours(1));
        }
    }

    #[test]
    fn short_series_yields_empty() {
        let series = series_of(4);
        assert!(build_windows(&series, 4).unwrap().is_empty());
    }

    #[test]
    fn window_len_below_two_rejected() {
        let series = series_of(5);
        assert!(build_windows(&series, 1).is_err());
    }

    #[test]
    fn missing_hour_excludes_overlapping_windows() {
        let mut samples: Vec<_> = (0..40).map(full).collect();
        samples[17].targets[2] = Value::Missing;
        let series = Series::new(samples, "t").unwrap();
        let t = 6;
        let windows = build_windows(&series, t).unwrap();
        assert_eq!(windows.len(), brute_force_count(&series, t));
        for w in &windows {
            assert!(w
                .inputs()
                .iter()
                .all(|s| s.timestamp != ts(17)));
        }
        // windows labelled at ts(17) are also gone: label not observed
        assert!(windows.iter().all(|w| w.label_timestamp() != ts(17)));
    }

    #[test]
    fn filled_values_allowed_as_inputs_not_labels() {
        let mut samples: Vec<_> = (0..20).map(full).collect();
        samples[9].targets[0] = Value::Filled(1.09);
        let series = Series::new(samples, "t").unwrap();
        let windows = build_windows(&series, 4).unwrap();
        assert_eq!(windows.len(), brute_force_count(&series, 4));
        assert!(windows.iter().any(|w| w
            .inputs()
            .iter()
            .any(|s| s.timestamp == ts(9))));
        assert!(windows.iter().all(|w| w.label_timestamp() != ts(9)));
    }

    #[test]
    fn counts_match_brute_force_on_random_gap_patterns() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(10..200);
            let mut samples: Vec<_> = (0..n).map(full).collect();
            for s in samples.iter_mut() {
                if rng.random_bool(0.08) {
                    let c = rng.random_range(0..TARGET_CHANNELS);
                    s.targets[c] = Value::Missing;
                }
                if rng.random_bool(0.04) {
                    let c = rng.random_range(0..COVARIATE_CHANNELS);
                    s.covariates[c] = Value::Missing;
                }
            }
            let series = Series::new(samples, "t").unwrap();
            let t = rng.random_range(2..12);
            assert_eq!(
                build_windows(&series, t).unwrap().len(),
                brute_force_count(&series, t)
            );
        }
    }
}
