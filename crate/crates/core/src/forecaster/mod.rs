//! One-step-ahead quantile forecasting of the five frequency channels.
//!
//! The model consumes a window of T past hourly samples (targets, covariates,
//! calendar fingerprints) and predicts, for each channel, the next hour's
//! mean and seven quantiles. Training minimizes pinball loss across the seven
//! levels plus a squared-error term on the mean head, with exact hand-written
//! reverse-mode gradients.

mod container;
mod features;
mod loss;
mod net;
mod quantiles;
mod train;

pub use loss::{batch_loss, gradients, pinball_loss};
pub use quantiles::{decode_quantiles, MEDIAN_INDEX, QUANTILE_LEVELS};
pub use train::{train, SplitFractions};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{DataError, NormStats, Window, TARGET_CHANNELS};
use features::build_features;
use net::{Dims, Params};

/// Errors from model construction, evaluation, training, and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("window length {got} does not match the model window {expected}")]
    WindowMismatch { expected: usize, got: usize },
    #[error("non-finite model input")]
    NonFiniteInput,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite gradient at parameter index {parameter_index}")]
    NonFiniteGradient { parameter_index: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("insufficient data: {needed} windows needed per split, found {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("bad magic: not a model container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model container: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Architecture and training hyperparameters.
///
/// The quantile levels are fixed to [`QUANTILE_LEVELS`]; everything else is
/// declared here so a (config, seed, data) triple pins training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input window length T, in hours.
    pub window: usize,
    /// Hidden width H.
    pub hidden: usize,
    /// Attention heads; must divide `hidden`.
    pub heads: usize,
    /// Number of self-attention blocks.
    pub blocks: usize,
    /// Feed-forward sublayer width.
    pub ff_dim: usize,
    pub hour_embed: usize,
    pub day_embed: usize,
    pub month_embed: usize,
    /// Dropout rate in [0, 1); applied only during training.
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience, in epochs without validation improvement.
    pub patience: usize,
    /// Weight of the squared-error term on the mean head.
    pub mean_loss_weight: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 96,
            hidden: 32,
            heads: 4,
            blocks: 1,
            ff_dim: 64,
            hour_embed: 4,
            day_embed: 4,
            month_embed: 4,
            dropout: 0.0,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 60,
            patience: 8,
            mean_loss_weight: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.window < 2 {
            return fail("window must be at least 2");
        }
        if self.hidden < 2 {
            return fail("hidden width must be at least 2");
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail("heads must be positive and divide the hidden width");
        }
        if self.blocks == 0 {
            return fail("at least one attention block is required");
        }
        if self.ff_dim == 0 {
            return fail("feed-forward width must be positive");
        }
        if self.hour_embed == 0 || self.day_embed == 0 || self.month_embed == 0 {
            return fail("embedding sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive and finite");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(self.mean_loss_weight >= 0.0 && self.mean_loss_weight.is_finite()) {
            return fail("mean loss weight must be non-negative and finite");
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Forecast for one channel: mean plus the seven quantiles in level order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelForecast {
    pub mean: f64,
    pub quantiles: [f64; 7],
}

/// The predicted next-hour distribution over all five channels, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastDistribution {
    pub channels: [ChannelForecast; TARGET_CHANNELS],
}

/// Trained (or freshly initialized) forecaster: parameters, the
/// normalization statistics baked in at training time, and the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    stats: NormStats,
    params: Params,
    training_log: Vec<EpochStats>,
    train_range: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

impl ModelState {
    /// Initializes parameters from `(config, seed)`; identical inputs yield
    /// bit-identical parameter vectors.
    pub fn init(config: &ModelConfig, stats: &NormStats, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let dims = Dims::from_config(config);
        Ok(ModelState {
            config: config.clone(),
            stats: stats.clone(),
            params: Params::init(&dims, seed),
            training_log: Vec::new(),
            train_range: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn training_log(&self) -> &[EpochStats] {
        &self.training_log
    }

    /// The half-open data range the model was trained on, if trained.
    pub fn train_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        self.train_range
    }

    /// The parameters as a flat vector in canonical order.
    pub fn parameters(&self) -> Vec<f64> {
        self.params.to_flat()
    }

    pub fn parameter_count(&self) -> usize {
        Params::count(&Dims::from_config(&self.config))
    }

    /// A copy of this model with the parameter vector replaced, e.g. for
    /// finite-difference probing. The vector must have canonical length.
    pub fn with_parameters(&self, flat: &[f64]) -> Result<Self, ModelError> {
        let dims = Dims::from_config(&self.config);
        let params = Params::from_flat(&dims, flat).ok_or_else(|| {
            ModelError::InvalidConfig(format!(
                "parameter vector length {} does not match the config ({} expected)",
                flat.len(),
                Params::count(&dims)
            ))
        })?;
        Ok(ModelState {
            config: self.config.clone(),
            stats: self.stats.clone(),
            params,
            training_log: self.training_log.clone(),
            train_range: self.train_range,
        })
    }

    /// One-step-ahead prediction from a window of T consecutive samples.
    ///
    /// Inputs are standardized with the embedded statistics; outputs are
    /// de-standardized back to Hz. Quantiles are non-decreasing in the level
    /// by construction. Deterministic: dropout is disabled at inference.
    pub fn forward(&self, window: &Window<'_>) -> Result<ForecastDistribution, ModelError> {
        if window.len() != self.config.window {
            return Err(ModelError::WindowMismatch {
                expected: self.config.window,
                got: window.len(),
            });
        }
        let features = build_features(window.inputs(), &self.stats)?;
        let dims = Dims::from_config(&self.config);
        let cache = net::forward(&self.params, &dims, &features, None);
        let quantiles_std = cache.quantiles_std();

        let mut channels = [ChannelForecast {
            mean: 0.0,
            quantiles: [0.0; 7],
        }; TARGET_CHANNELS];
        for c in 0..TARGET_CHANNELS {
            channels[c].mean = self.stats.destandardize_target(c, cache.mean_std[c]);
            for k in 0..7 {
                channels[c].quantiles[k] = self.stats.destandardize_target(c, quantiles_std[c][k]);
            }
            if !channels[c].mean.is_finite()
                || channels[c].quantiles.iter().any(|v| !v.is_finite())
            {
                return Err(ModelError::NonFiniteInput);
            }
        }
        Ok(ForecastDistribution { channels })
    }

    pub(crate) fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        stats: NormStats,
        params: Params,
        training_log: Vec<EpochStats>,
        train_range: Option<(DateTime<Utc>, DateTime<Utc>)>,
    ) -> Self {
        ModelState {
            config,
            stats,
            params,
            training_log,
            train_range,
        }
    }

    /// Serializes into the versioned model container.
    pub fn save(&self, writer: impl std::io::Write) -> Result<(), ModelError> {
        container::save(self, writer)
    }

    /// Reads a model container written by [`ModelState::save`].
    pub fn load(reader: impl std::io::Read) -> Result<Self, ModelError> {
        container::load(reader)
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::{small_config, test_series, test_stats};
    use super::*;
    use crate::timeseries::build_windows;

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = small_config();
        let stats = test_stats();
        let a = ModelState::init(&config, &stats, 42).unwrap();
        let b = ModelState::init(&config, &stats, 42).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        let c = ModelState::init(&config, &stats, 43).unwrap();
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn parameter_count_matches_flat_length() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 1).unwrap();
        assert_eq!(model.parameters().len(), model.parameter_count());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small_config();
        c.heads = 3; // does not divide hidden = 8
        assert!(ModelState::init(&c, &test_stats(), 0).is_err());

        let mut c = small_config();
        c.window = 1;
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_outputs_are_finite_ordered_and_deterministic() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 7).unwrap();
        let series = test_series(30, 3);
        let windows = build_windows(&series, config.window).unwrap();

        let out1 = model.forward(&windows[0]).unwrap();
        let out2 = model.forward(&windows[0]).unwrap();
        assert_eq!(out1, out2);
        for ch in &out1.channels {
            assert!(ch.mean.is_finite());
            for pair in ch.quantiles.windows(2) {
                assert!(pair[0] <= pair[1]);
            }
        }
    }

    #[test]
    fn window_length_mismatch_rejected() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 7).unwrap();
        let series = test_series(30, 3);
        let windows = build_windows(&series, 6).unwrap();
        assert!(matches!(
            model.forward(&windows[0]),
            Err(ModelError::WindowMismatch { expected: 8, got: 6 })
        ));
    }

    #[test]
    fn suppressed_increments_collapse_quantiles_onto_median() {
        let config = small_config();
        let mut model = ModelState::init(&config, &test_stats(), 7).unwrap();
        {
            let params = model.params_mut();
            // zero the increment columns and push their biases into the
            // softplus underflow region; median columns stay untouched
            for c in 0..TARGET_CHANNELS {
                for k in 1..7 {
                    params.w_quant.column_mut(c * 7 + k).fill(0.0);
                    params.b_quant[c * 7 + k] = -745.0;
                }
            }
        }
        let series = test_series(30, 3);
        let windows = build_windows(&series, config.window).unwrap();
        let out = model.forward(&windows[0]).unwrap();
        for ch in &out.channels {
            for k in 0..7 {
                assert_eq!(ch.quantiles[k], ch.quantiles[MEDIAN_INDEX]);
            }
        }
    }

    #[test]
    fn quantile_monotonicity_holds_across_random_models() {
        use rand::{Rng, SeedableRng};
        let config = small_config();
        let series = test_series(60, 9);
        let windows = build_windows(&series, config.window).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        for trial in 0..200 {
            let model = ModelState::init(&config, &test_stats(), trial).unwrap();
            let w = &windows[rng.random_range(0..windows.len())];
            let out = model.forward(w).unwrap();
            for ch in &out.channels {
                for pair in ch.quantiles.windows(2) {
                    assert!(pair[0] <= pair[1]);
                }
            }
        }
    }
}
