//! Quantile-forecasting anomaly detection for structural frequency monitoring.
//!
//! The engine learns the normal hourly evolution of a structure's first five
//! natural frequencies from past observations, weather covariates, and
//! calendar fingerprints. An attention-based forecaster trained with pinball
//! loss predicts the mean and seven quantiles of the next hour's frequencies;
//! observations falling outside the predicted percentile band are flagged as
//! anomalies while sliding over the monitoring period.
//!
//! Modules:
//! - [`timeseries`]: data model, CSV ingestion, gap handling, normalization,
//!   and sliding-window construction.
//! - [`forecaster`]: the quantile forecaster, its training loop with exact
//!   reverse-mode gradients, and the model container format.
//! - [`anomaly`]: the percentile-band outlier rule, deviation scoring, and
//!   the sliding detection driver.
//! - [`synthbench`]: labeled synthetic monitoring scenarios and detection
//!   metrics against ground truth.

pub mod anomaly;
pub mod forecaster;
pub mod synthbench;
pub mod timeseries;

pub use anomaly::{AnomalyRecord, ChannelVerdict, DetectorConfig, Percentile, RecordSummary};
pub use forecaster::{ChannelForecast, ForecastDistribution, ModelConfig, ModelState};
pub use synthbench::{AnomalyEvent, EvalReport, Scenario};
pub use timeseries::{MonitoringSample, NormStats, Series, TimeRange, Window};
