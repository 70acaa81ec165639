//! Training objective: pinball loss over the seven quantile levels plus a
//! weighted squared error on the mean head, computed in standardized space so
//! all channels and levels contribute on the same scale.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::build_features;
use super::net::{self, Dims, Params, QUANT_HEAD_PER_CHANNEL};
use super::quantiles::{decode_quantiles_backward, QUANTILE_LEVELS};
use super::{ModelError, ModelState};
use crate::timeseries::{NormStats, Window, TARGET_CHANNELS};

/// Fixed chunk width for gradient reduction. Partial sums are combined in
/// chunk order, so results do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// The pinball (quantile) loss `max(level * e, (level - 1) * e)` with
/// residual `e = y - predicted`. Minimized in expectation when `predicted`
/// is the `level`-quantile of `y`.
pub fn pinball_loss(y: f64, predicted: f64, level: f64) -> f64 {
    let e = y - predicted;
    if e >= 0.0 {
        level * e
    } else {
        (level - 1.0) * e
    }
}

// Subgradient at the kink (e == 0) takes the `level - 1` branch, so gradient
// checks have one documented answer.
fn pinball_grad_wrt_predicted(y: f64, predicted: f64, level: f64) -> f64 {
    if y - predicted > 0.0 {
        -level
    } else {
        1.0 - level
    }
}

/// Mean over windows and channels of the summed pinball terms plus the
/// weighted mean-head squared error, on standardized targets.
pub fn batch_loss(model: &ModelState, batch: &[Window<'_>]) -> Result<f64, ModelError> {
    let dims = Dims::from_config(model.config());
    let loss = batch_loss_inner(
        model.params(),
        &dims,
        model.stats(),
        model.config().mean_loss_weight,
        batch,
    )?;
    if !loss.is_finite() {
        return Err(ModelError::Diverged { epoch: 0 });
    }
    Ok(loss)
}

/// Exact reverse-mode gradient of [`batch_loss`] with respect to every
/// parameter, as a flat vector in canonical order.
pub fn gradients(model: &ModelState, batch: &[Window<'_>]) -> Result<Vec<f64>, ModelError> {
    let dims = Dims::from_config(model.config());
    let (_, grads) = loss_and_grads(
        model.params(),
        &dims,
        model.stats(),
        model.config().mean_loss_weight,
        batch,
        None,
    )?;
    let flat = grads.to_flat();
    if let Some(parameter_index) = flat.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { parameter_index });
    }
    Ok(flat)
}

fn check_window_lengths(dims: &Dims, batch: &[Window<'_>]) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for w in batch {
        if w.len() != dims.window {
            return Err(ModelError::WindowMismatch {
                expected: dims.window,
                got: w.len(),
            });
        }
    }
    Ok(())
}

fn batch_loss_inner(
    params: &Params,
    dims: &Dims,
    stats: &NormStats,
    lambda: f64,
    batch: &[Window<'_>],
) -> Result<f64, ModelError> {
    check_window_lengths(dims, batch)?;
    let partials: Result<Vec<f64>, ModelError> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut sum = 0.0;
            for w in chunk {
                let features = build_features(w.inputs(), stats)?;
                let cache = net::forward(params, dims, &features, None);
                let (loss, _, _) = window_output_grads(&cache, stats, lambda, w);
                sum += loss;
            }
            Ok(sum)
        })
        .collect();
    let total: f64 = partials?.iter().sum();
    Ok(total / (batch.len() * TARGET_CHANNELS) as f64)
}

/// Shared loss-plus-gradient path for `gradients` and the training loop.
///
/// With dropout the evaluation runs sequentially (masks are drawn from the
/// single rng stream); without it, windows are processed in fixed chunks in
/// parallel and partial gradients combined in chunk order, keeping the result
/// independent of thread count.
pub(crate) fn loss_and_grads(
    params: &Params,
    dims: &Dims,
    stats: &NormStats,
    lambda: f64,
    batch: &[Window<'_>],
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<(f64, Params), ModelError> {
    check_window_lengths(dims, batch)?;
    let scale = 1.0 / (batch.len() * TARGET_CHANNELS) as f64;

    if dropout.is_some() {
        let mut grads = Params::zeros(dims);
        let mut total = 0.0;
        for w in batch {
            total += window_contribution(
                params,
                dims,
                stats,
                lambda,
                w,
                scale,
                dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
                &mut grads,
            )?;
        }
        return Ok((total * scale, grads));
    }

    let partials: Result<Vec<(f64, Params)>, ModelError> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = Params::zeros(dims);
            let mut sum = 0.0;
            for w in chunk {
                sum += window_contribution(params, dims, stats, lambda, w, scale, None, &mut grads)?;
            }
            Ok((sum, grads))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = Params::zeros(dims);
    for (partial_loss, partial_grads) in partials? {
        total += partial_loss;
        add_params(&mut grads, &partial_grads);
    }
    Ok((total * scale, grads))
}

#[allow(clippy::too_many_arguments)]
fn window_contribution(
    params: &Params,
    dims: &Dims,
    stats: &NormStats,
    lambda: f64,
    w: &Window<'_>,
    scale: f64,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
    grads: &mut Params,
) -> Result<f64, ModelError> {
    let features = build_features(w.inputs(), stats)?;
    let cache = net::forward(params, dims, &features, dropout);
    let (loss, mut d_mean, mut d_quant_raw) = window_output_grads(&cache, stats, lambda, w);
    for v in d_mean.iter_mut() {
        *v *= scale;
    }
    for v in d_quant_raw.iter_mut() {
        *v *= scale;
    }
    net::backward(params, dims, &cache, d_mean, d_quant_raw, grads);
    Ok(loss)
}

/// Per-window loss and the loss gradient against the raw head outputs, both
/// unscaled (the caller divides by windows x channels).
fn window_output_grads(
    cache: &net::ForwardCache,
    stats: &NormStats,
    lambda: f64,
    w: &Window<'_>,
) -> (
    f64,
    [f64; TARGET_CHANNELS],
    [f64; TARGET_CHANNELS * QUANT_HEAD_PER_CHANNEL],
) {
    let label = w.label_targets();
    let quantiles = cache.quantiles_std();

    let mut loss = 0.0;
    let mut d_mean = [0.0; TARGET_CHANNELS];
    let mut d_quant_raw = [0.0; TARGET_CHANNELS * QUANT_HEAD_PER_CHANNEL];

    for c in 0..TARGET_CHANNELS {
        let y = stats.standardize_target(c, label[c]);

        let mut d_q = [0.0; 7];
        for (k, &level) in QUANTILE_LEVELS.iter().enumerate() {
            loss += pinball_loss(y, quantiles[c][k], level);
            d_q[k] = pinball_grad_wrt_predicted(y, quantiles[c][k], level);
        }

        let raw = &cache.quant_raw[c * QUANT_HEAD_PER_CHANNEL..(c + 1) * QUANT_HEAD_PER_CHANNEL];
        let (d_median, d_up, d_low) =
            decode_quantiles_backward([raw[1], raw[2], raw[3]], [raw[4], raw[5], raw[6]], d_q);
        let out = &mut d_quant_raw[c * QUANT_HEAD_PER_CHANNEL..(c + 1) * QUANT_HEAD_PER_CHANNEL];
        out[0] = d_median;
        out[1..4].copy_from_slice(&d_up);
        out[4..7].copy_from_slice(&d_low);

        let mean_err = cache.mean_std[c] - y;
        loss += lambda * mean_err * mean_err;
        d_mean[c] = lambda * 2.0 * mean_err;
    }

    (loss, d_mean, d_quant_raw)
}

pub(crate) fn add_params(into: &mut Params, other: &Params) {
    into.emb_hour += &other.emb_hour;
    into.emb_day += &other.emb_day;
    into.emb_month += &other.emb_month;
    into.w_in += &other.w_in;
    into.b_in += &other.b_in;
    for (a, b) in into.blocks.iter_mut().zip(&other.blocks) {
        a.w_q += &b.w_q;
        a.b_q += &b.b_q;
        a.w_k += &b.w_k;
        a.b_k += &b.b_k;
        a.w_v += &b.w_v;
        a.b_v += &b.b_v;
        a.w_o += &b.w_o;
        a.b_o += &b.b_o;
        a.w_ff1 += &b.w_ff1;
        a.b_ff1 += &b.b_ff1;
        a.w_ff2 += &b.w_ff2;
        a.b_ff2 += &b.b_ff2;
    }
    into.w_mean += &other.w_mean;
    into.b_mean += &other.b_mean;
    into.w_quant += &other.w_quant;
    into.b_quant += &other.b_quant;
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{small_config, test_series, test_stats};
    use super::super::{ModelConfig, ModelState};
    use super::*;
    use crate::timeseries::build_windows;

    #[test]
    fn pinball_matches_direct_formula() {
        // zero residual
        assert_eq!(pinball_loss(2.5, 2.5, 0.75), 0.0);
        // q = 0.99, e = +1
        assert!((pinball_loss(1.0, 0.0, 0.99) - 0.99).abs() < 1e-15);
        // q = 0.10, e = -1
        assert!((pinball_loss(0.0, 1.0, 0.10) - 0.90).abs() < 1e-15);
    }

    #[test]
    fn pinball_is_nonnegative_and_zero_only_at_fit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let y = rng.random_range(-10.0..10.0);
            let p = rng.random_range(-10.0..10.0);
            let q = rng.random_range(0.01..0.99);
            let l = pinball_loss(y, p, q);
            assert!(l >= 0.0);
            if (y - p).abs() > 1e-12 {
                assert!(l > 0.0);
            }
        }
    }

    fn exact_fit_model(series: &crate::timeseries::Series, window: usize) -> ModelState {
        // a model that predicts a fixed standardized value per channel via
        // biases only; pair it with a window whose label equals that value
        let config = ModelConfig {
            window,
            ..small_config()
        };
        let stats = test_stats();
        let mut model = ModelState::init(&config, &stats, 3).unwrap();
        let windows = build_windows(series, window).unwrap();
        let label = windows[0].label_targets();
        {
            let p = model.params_mut();
            // cut every weight path so outputs are pure bias
            p.w_mean.fill(0.0);
            p.w_quant.fill(0.0);
            for c in 0..TARGET_CHANNELS {
                let y = stats.standardize_target(c, label[c]);
                p.b_mean[c] = y;
                p.b_quant[c * 7] = y;
                for k in 1..7 {
                    p.b_quant[c * 7 + k] = -745.0; // softplus underflow: increments 0
                }
            }
        }
        model
    }

    #[test]
    fn exact_fit_gives_zero_loss() {
        let series = test_series(20, 5);
        let model = exact_fit_model(&series, 8);
        let windows = build_windows(&series, 8).unwrap();
        let loss = batch_loss(&model, &windows[0..1]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_window_loss_matches_manual_sum() {
        let config = small_config();
        let stats = test_stats();
        let model = ModelState::init(&config, &stats, 11).unwrap();
        let series = test_series(20, 6);
        let windows = build_windows(&series, config.window).unwrap();
        let w = &windows[0];

        let loss = batch_loss(&model, std::slice::from_ref(w)).unwrap();

        // independent recomputation from the public forward output
        let dist = model.forward(w).unwrap();
        let label = w.label_targets();
        let mut manual = 0.0;
        for c in 0..TARGET_CHANNELS {
            let y = stats.standardize_target(c, label[c]);
            for (k, &level) in QUANTILE_LEVELS.iter().enumerate() {
                let q_std = stats.standardize_target(c, dist.channels[c].quantiles[k]);
                manual += pinball_loss(y, q_std, level);
            }
            let m_std = stats.standardize_target(c, dist.channels[c].mean);
            manual += config.mean_loss_weight * (y - m_std) * (y - m_std);
        }
        manual /= TARGET_CHANNELS as f64;
        assert!(
            (loss - manual).abs() < 1e-12,
            "batch {loss} vs manual {manual}"
        );
    }

    #[test]
    fn doubling_the_batch_preserves_the_mean() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 11).unwrap();
        let series = test_series(30, 6);
        let windows = build_windows(&series, config.window).unwrap();
        let batch: Vec<_> = windows[0..4].to_vec();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let a = batch_loss(&model, &batch).unwrap();
        let b = batch_loss(&model, &doubled).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn batch_loss_is_permutation_invariant() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 11).unwrap();
        let series = test_series(40, 6);
        let windows = build_windows(&series, config.window).unwrap();
        let mut shuffled = windows.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        let a = batch_loss(&model, &windows).unwrap();
        let b = batch_loss(&model, &shuffled).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn empty_batch_rejected() {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 11).unwrap();
        assert!(matches!(
            batch_loss(&model, &[]),
            Err(ModelError::EmptyBatch)
        ));
    }

    /// Central finite differences over every parameter of a small model.
    #[test]
    fn gradients_match_finite_differences() {
        let config = small_config();
        let stats = test_stats();
        let model = ModelState::init(&config, &stats, 17).unwrap();
        let series = test_series(24, 8);
        let windows = build_windows(&series, config.window).unwrap();
        let batch = &windows[0..3];

        let analytic = gradients(&model, batch).unwrap();
        let theta = model.parameters();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let lp = batch_loss(&model.with_parameters(&plus).unwrap(), batch).unwrap();
            let lm = batch_loss(&model.with_parameters(&minus).unwrap(), batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "parameter {i}: analytic {} vs fd {fd}, rel {rel}",
                analytic[i]
            );
        }
        eprintln!("max relative gradient error: {worst:.3e}");
    }

    #[test]
    fn kink_subgradient_takes_the_low_branch() {
        // residual exactly zero: gradient wrt prediction is 1 - level
        assert_eq!(pinball_grad_wrt_predicted(1.0, 1.0, 0.75), 0.25);
        // strictly positive residual: -level
        assert_eq!(pinball_grad_wrt_predicted(2.0, 1.0, 0.75), -0.75);
    }

    #[test]
    fn mean_head_gradients_vanish_when_weight_is_zero() {
        let mut config = small_config();
        config.mean_loss_weight = 0.0;
        let stats = test_stats();
        let model = ModelState::init(&config, &stats, 5).unwrap();
        let series = test_series(20, 4);
        let windows = build_windows(&series, config.window).unwrap();

        let dims = Dims::from_config(&config);
        let (_, grads) = loss_and_grads(
            model.params(),
            &dims,
            &stats,
            config.mean_loss_weight,
            &windows[0..2],
            None,
        )
        .unwrap();
        assert!(grads.w_mean.iter().all(|&g| g == 0.0));
        assert!(grads.b_mean.iter().all(|&g| g == 0.0));
        // the quantile path must still be live
        assert!(grads.w_quant.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn unused_embedding_rows_have_zero_gradient() {
        let config = small_config();
        let stats = test_stats();
        let model = ModelState::init(&config, &stats, 5).unwrap();
        // March data only: all month rows except index 2 are dead paths
        let series = test_series(20, 4);
        let windows = build_windows(&series, config.window).unwrap();

        let dims = Dims::from_config(&config);
        let (_, grads) = loss_and_grads(
            model.params(),
            &dims,
            &stats,
            config.mean_loss_weight,
            &windows[0..2],
            None,
        )
        .unwrap();
        for (m, row) in grads.emb_month.rows().into_iter().enumerate() {
            if m == 2 {
                assert!(row.iter().any(|&g| g != 0.0));
            } else {
                assert!(row.iter().all(|&g| g == 0.0), "month {m} should be unused");
            }
        }
    }
}
