//! Labeled synthetic monitoring scenarios.
//!
//! A scenario mimics the structure of a real campaign: five frequency
//! channels coupled to a daily/seasonal temperature cycle, weather covariates
//! emitted consistently with that temperature, and injected anomaly events
//! with hour-by-hour ground-truth labels. Generation is deterministic from
//! the seed, and events are purely additive, so the evented series differs
//! from the clean one only inside event spans.

mod eval;

pub use eval::{evaluate, evaluate_summaries, EvalError, EvalReport, EventOutcome};

use std::io::{BufRead, BufReader, Read, Write};

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{
    fingerprint, DataError, MonitoringSample, Series, Value, COVARIATE_CHANNELS, TARGET_CHANNELS,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("events {first} and {second} overlap; labels would be ambiguous")]
    OverlappingEvents { first: usize, second: usize },
    #[error("cannot parse scenario: {0}")]
    Toml(String),
    #[error("bad labels file: {0}")]
    BadLabels(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The qualitative event classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Short additive excursion on the affected channels.
    Spike,
    /// Sustained additive shift over the event span.
    StepShift,
    /// Oscillating excursion confined to channel 2 (sign alternates hourly).
    #[serde(rename = "periodic-channel-2")]
    PeriodicChannel2,
    /// Simultaneous additive excursion on several channels.
    MultiChannelTransient,
}

/// One injected anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyEvent {
    pub kind: EventKind,
    pub start: DateTime<Utc>,
    pub duration_hours: u32,
    /// Excursion size in multiples of the affected channel's noise sigma.
    pub magnitude_sigma: f64,
    /// Affected channels, 1-based.
    pub channels: Vec<u8>,
}

impl AnomalyEvent {
    /// Half-open hour span `[start, end)`.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.duration_hours as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetParams {
    pub baseline_hz: [f64; TARGET_CHANNELS],
    pub temp_coupling_hz_per_c: [f64; TARGET_CHANNELS],
    pub noise_sigma_hz: [f64; TARGET_CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureParams {
    pub mean_c: f64,
    pub daily_amplitude_c: f64,
    pub seasonal_amplitude_c: f64,
    /// Hour of day (0-24) at which the daily cycle peaks.
    pub daily_peak_hour: f64,
    /// Day of year (1-366) at which the seasonal cycle peaks.
    pub seasonal_peak_day: f64,
    pub noise_sigma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateParams {
    /// Probability that any given hour is rainy.
    pub rain_probability: f64,
    pub rain_mean_mm: f64,
    pub humidity_base_pct: f64,
    /// Humidity response per degree of temperature deviation.
    pub humidity_temp_slope: f64,
    pub humidity_noise_pct: f64,
    pub wind_mean_ms: f64,
    pub wind_noise_ms: f64,
    /// Mean ratio of peak to average wind speed; clamped to at least 1.
    pub gust_mean_factor: f64,
    pub gust_noise: f64,
    pub wind_dir_mean_deg: f64,
    pub wind_dir_spread_deg: f64,
}

/// A complete synthetic-data recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub start: DateTime<Utc>,
    pub duration_hours: u32,
    pub seed: u64,
    pub targets: TargetParams,
    pub temperature: TemperatureParams,
    pub covariates: CovariateParams,
    #[serde(default)]
    pub events: Vec<AnomalyEvent>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| SynthError::Toml(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.duration_hours as i64)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidScenario(m));
        if self.duration_hours < 1 {
            return fail("duration must be at least 1 hour".into());
        }
        if self.start.minute() != 0 || self.start.second() != 0 {
            return fail("start must be on the hourly grid".into());
        }
        for c in 0..TARGET_CHANNELS {
            if !(self.targets.baseline_hz[c] > 0.0) {
                return fail(format!("baseline for channel {} must be positive", c + 1));
            }
            if !(self.targets.noise_sigma_hz[c] >= 0.0) {
                return fail(format!("noise sigma for channel {} must be >= 0", c + 1));
            }
        }
        if !(0.0..1.0).contains(&self.covariates.rain_probability) {
            return fail("rain probability must lie in [0, 1)".into());
        }
        if !(0.0..360.0).contains(&self.covariates.wind_dir_mean_deg) {
            return fail("wind direction mean must lie in [0, 360)".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.duration_hours < 1 {
                return fail(format!("event {i}: duration must be at least 1 hour"));
            }
            if !(e.magnitude_sigma > 0.0) {
                return fail(format!("event {i}: magnitude must be positive"));
            }
            if e.channels.is_empty() {
                return fail(format!("event {i}: affected channels must be non-empty"));
            }
            for &ch in &e.channels {
                if ch < 1 || ch > TARGET_CHANNELS as u8 {
                    return fail(format!("event {i}: channel {ch} out of range 1-5"));
                }
            }
            if e.kind == EventKind::PeriodicChannel2 && e.channels != [2] {
                return fail(format!(
                    "event {i}: periodic-channel-2 must affect exactly channel 2"
                ));
            }
            if e.start < self.start || e.end() > self.end() {
                return fail(format!("event {i}: span lies outside the scenario duration"));
            }
        }
        // time-overlapping events would leave hour labels ambiguous
        for i in 0..self.events.len() {
            for j in i + 1..self.events.len() {
                let (a, b) = (&self.events[i], &self.events[j]);
                if a.start < b.end() && b.start < a.end() {
                    return Err(SynthError::OverlappingEvents { first: i, second: j });
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth label for one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelPoint {
    pub timestamp: DateTime<Utc>,
    /// Index of the covering event in the scenario's event list, if any.
    pub event: Option<u32>,
}

impl LabelPoint {
    pub fn is_anomaly(&self) -> bool {
        self.event.is_some()
    }
}

/// Generates the labeled series for a scenario, deterministically from its
/// seed.
///
/// The clean signal per channel is baseline plus the temperature coupling
/// times the temperature deviation (daily and seasonal sinusoids plus noise),
/// plus i.i.d. Gaussian target noise. Events add `magnitude * sigma` on
/// their channels and never consume randomness, so samples outside event
/// spans are bit-identical to the clean generation with the same seed.
pub fn generate(scenario: &Scenario) -> Result<(Series, Vec<LabelPoint>), SynthError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = scenario.duration_hours as usize;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let tp = &scenario.temperature;
    let cp = &scenario.covariates;
    let tg = &scenario.targets;
    let tau = std::f64::consts::TAU;

    for h in 0..n {
        let t = scenario.start + Duration::hours(h as i64);

        // fixed draw order per hour keeps the stream independent of values
        let z_temp: f64 = rng.sample(rand_distr::StandardNormal);
        let u_rain: f64 = rng.random_range(0.0..1.0);
        let e_rain: f64 = rng.sample(rand_distr::Exp1);
        let z_hum: f64 = rng.sample(rand_distr::StandardNormal);
        let z_wind: f64 = rng.sample(rand_distr::StandardNormal);
        let z_gust: f64 = rng.sample(rand_distr::StandardNormal);
        let z_dir: f64 = rng.sample(rand_distr::StandardNormal);
        let mut z_target = [0.0; TARGET_CHANNELS];
        for z in z_target.iter_mut() {
            *z = rng.sample(rand_distr::StandardNormal);
        }

        let hod = t.hour() as f64;
        let doy = t.ordinal() as f64;
        let temp_dev = tp.daily_amplitude_c * (tau * (hod - tp.daily_peak_hour) / 24.0).cos()
            + tp.seasonal_amplitude_c * (tau * (doy - tp.seasonal_peak_day) / 365.25).cos()
            + tp.noise_sigma_c * z_temp;

        let temp = tp.mean_c + temp_dev;
        let rain = if u_rain < cp.rain_probability {
            cp.rain_mean_mm * e_rain
        } else {
            0.0
        };
        let humidity = (cp.humidity_base_pct + cp.humidity_temp_slope * temp_dev
            + cp.humidity_noise_pct * z_hum)
            .clamp(0.0, 100.0);
        let wind_avg = (cp.wind_mean_ms + cp.wind_noise_ms * z_wind).abs();
        let gust = (cp.gust_mean_factor + cp.gust_noise * z_gust).max(1.0);
        let wind_peak = wind_avg * gust;
        let wind_dir = (cp.wind_dir_mean_deg + cp.wind_dir_spread_deg * z_dir).rem_euclid(360.0);

        let mut targets = [Value::Missing; TARGET_CHANNELS];
        for c in 0..TARGET_CHANNELS {
            let clean = tg.baseline_hz[c]
                + tg.temp_coupling_hz_per_c[c] * temp_dev
                + tg.noise_sigma_hz[c] * z_target[c];
            targets[c] = Value::Observed(clean);
        }

        let mut covariates = [Value::Missing; COVARIATE_CHANNELS];
        covariates[0] = Value::Observed(temp);
        covariates[1] = Value::Observed(rain);
        covariates[2] = Value::Observed(humidity);
        covariates[3] = Value::Observed(wind_avg);
        covariates[4] = Value::Observed(wind_peak);
        covariates[5] = Value::Observed(wind_dir);

        samples.push(MonitoringSample {
            timestamp: t,
            targets,
            covariates,
            fingerprints: fingerprint(t),
        });
        labels.push(LabelPoint {
            timestamp: t,
            event: None,
        });
    }

    // superimpose events: purely additive, labelled hour by hour
    for (id, event) in scenario.events.iter().enumerate() {
        let offset = (event.start - scenario.start).num_hours() as usize;
        for k in 0..event.duration_hours as usize {
            let idx = offset + k;
            let sign = match event.kind {
                EventKind::PeriodicChannel2 => {
                    if k % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => 1.0,
            };
            for &ch in &event.channels {
                let c = ch as usize - 1;
                let delta = sign * event.magnitude_sigma * tg.noise_sigma_hz[c];
                if let Value::Observed(v) = samples[idx].targets[c] {
                    let shifted = v + delta;
                    if shifted <= 0.0 {
                        return Err(SynthError::InvalidScenario(format!(
                            "event {id} drives channel {ch} non-positive at {}",
                            samples[idx].timestamp
                        )));
                    }
                    samples[idx].targets[c] = Value::Observed(shifted);
                }
            }
            labels[idx].event = Some(id as u32);
        }
    }

    let series = Series::new(samples, format!("synthetic seed {}", scenario.seed))?;
    Ok((series, labels))
}

/// Writes labels as `timestamp,is_anomaly,event_id` (empty id when clean).
pub fn write_labels_csv(labels: &[LabelPoint], mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "timestamp,is_anomaly,event_id")?;
    for l in labels {
        let id = l.event.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            writer,
            "{},{},{}",
            l.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            l.is_anomaly(),
            id
        )?;
    }
    Ok(())
}

/// Reads a labels CSV written by [`write_labels_csv`].
pub fn parse_labels_csv(reader: impl Read) -> Result<Vec<LabelPoint>, SynthError> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| SynthError::BadLabels("empty file".into()))?
        .map_err(SynthError::Io)?;
    if header.trim_end() != "timestamp,is_anomaly,event_id" {
        return Err(SynthError::BadLabels(format!("bad header `{header}`")));
    }
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(SynthError::Io)?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(SynthError::BadLabels(format!("line {}: `{line}`", i + 2)));
        }
        let timestamp = DateTime::parse_from_rfc3339(parts[0])
            .map_err(|e| SynthError::BadLabels(format!("line {}: {e}", i + 2)))?
            .with_timezone(&Utc);
        let is_anomaly: bool = parts[1]
            .parse()
            .map_err(|_| SynthError::BadLabels(format!("line {}: bad flag", i + 2)))?;
        let event = if parts[2].is_empty() {
            None
        } else {
            Some(parts[2].parse::<u32>().map_err(|_| {
                SynthError::BadLabels(format!("line {}: bad event id", i + 2))
            })?)
        };
        if is_anomaly != event.is_some() {
            return Err(SynthError::BadLabels(format!(
                "line {}: flag and event id disagree",
                i + 2
            )));
        }
        labels.push(LabelPoint { timestamp, event });
    }
    Ok(labels)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use chrono::TimeZone;

    /// A plausible tower-like scenario with no events.
    pub fn base_scenario(duration_hours: u32, seed: u64) -> Scenario {
        Scenario {
            start: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            duration_hours,
            seed,
            targets: TargetParams {
                baseline_hz: [1.05, 1.32, 2.18, 2.46, 3.09],
                temp_coupling_hz_per_c: [0.0008, 0.0011, 0.0017, 0.0014, 0.0021],
                noise_sigma_hz: [0.002, 0.0022, 0.0026, 0.0028, 0.0031],
            },
            temperature: TemperatureParams {
                mean_c: 14.0,
                daily_amplitude_c: 4.5,
                seasonal_amplitude_c: 9.0,
                daily_peak_hour: 15.0,
                seasonal_peak_day: 205.0,
                noise_sigma_c: 0.8,
            },
            covariates: CovariateParams {
                rain_probability: 0.07,
                rain_mean_mm: 1.1,
                humidity_base_pct: 68.0,
                humidity_temp_slope: -1.4,
                humidity_noise_pct: 5.0,
                wind_mean_ms: 2.8,
                wind_noise_ms: 1.3,
                gust_mean_factor: 1.6,
                gust_noise: 0.25,
                wind_dir_mean_deg: 235.0,
                wind_dir_spread_deg: 42.0,
            },
            events: Vec::new(),
        }
    }
}
