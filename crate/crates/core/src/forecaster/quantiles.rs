//! Monotone quantile decoding.
//!
//! The head emits a median plus three raw increments per side. Cumulative
//! softplus of the increments yields quantiles that are non-decreasing in the
//! level by construction, so the percentile band is always well defined and
//! the mapping stays differentiable.

/// The seven modeled quantile levels, in increasing order.
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99];

/// Index of the median within [`QUANTILE_LEVELS`].
pub const MEDIAN_INDEX: usize = 3;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decodes (median, raw upper increments, raw lower increments) into the
/// seven quantiles ordered by level.
///
/// Upper quantiles are the median plus cumulative softplus of `upper_raw`;
/// lower quantiles subtract cumulative softplus of `lower_raw`. As raw
/// increments tend to negative infinity the softplus terms vanish and all
/// quantiles collapse onto the median.
pub fn decode_quantiles(median: f64, upper_raw: [f64; 3], lower_raw: [f64; 3]) -> [f64; 7] {
    let mut q = [0.0; 7];
    q[MEDIAN_INDEX] = median;
    let mut acc = median;
    for (i, &raw) in upper_raw.iter().enumerate() {
        acc += softplus(raw);
        q[MEDIAN_INDEX + 1 + i] = acc;
    }
    let mut acc = median;
    for (i, &raw) in lower_raw.iter().enumerate() {
        acc -= softplus(raw);
        q[MEDIAN_INDEX - 1 - i] = acc;
    }
    q
}

/// Reverse-mode companion of [`decode_quantiles`]: maps loss gradients with
/// respect to the seven quantiles back onto (median, upper raw, lower raw).
pub(crate) fn decode_quantiles_backward(
    upper_raw: [f64; 3],
    lower_raw: [f64; 3],
    d_quantiles: [f64; 7],
) -> (f64, [f64; 3], [f64; 3]) {
    // every quantile depends on the median with coefficient one
    let d_median: f64 = d_quantiles.iter().sum();

    let mut d_upper = [0.0; 3];
    let mut acc = 0.0;
    for i in (0..3).rev() {
        acc += d_quantiles[MEDIAN_INDEX + 1 + i];
        d_upper[i] = sigmoid(upper_raw[i]) * acc;
    }
    let mut d_lower = [0.0; 3];
    let mut acc = 0.0;
    for i in (0..3).rev() {
        acc += d_quantiles[MEDIAN_INDEX - 1 - i];
        d_lower[i] = -sigmoid(lower_raw[i]) * acc;
    }
    (d_median, d_upper, d_lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn negative_infinity_collapses_to_median() {
        let q = decode_quantiles(1.23, [-1e9; 3], [-1e9; 3]);
        for v in q {
            assert_eq!(v, 1.23);
        }
    }

    #[test]
    fn unit_increments_give_integer_ladder() {
        // softplus(x) = 1  <=>  x = ln(e - 1)
        let raw = (std::f64::consts::E - 1.0).ln();
        let q = decode_quantiles(0.0, [raw; 3], [raw; 3]);
        let expected = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        for (got, want) in q.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn sorted_for_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let median = rng.random_range(-100.0..100.0);
            let up = [(); 3].map(|_| rng.random_range(-50.0..50.0));
            let low = [(); 3].map(|_| rng.random_range(-50.0..50.0));
            let q = decode_quantiles(median, up, low);
            for pair in q.windows(2) {
                assert!(pair[0] <= pair[1], "quantile crossing in {q:?}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..50 {
            let median: f64 = rng.random_range(-2.0..2.0);
            let up = [(); 3].map(|_| rng.random_range(-3.0..3.0));
            let low = [(); 3].map(|_| rng.random_range(-3.0..3.0));
            // arbitrary smooth downstream loss: weighted sum of quantiles
            let weights = [(); 7].map(|_| rng.random_range(-1.0..1.0));
            let loss = |m: f64, u: [f64; 3], l: [f64; 3]| -> f64 {
                decode_quantiles(m, u, l)
                    .iter()
                    .zip(weights)
                    .map(|(q, w)| q * w)
                    .sum()
            };
            let (dm, du, dl) = decode_quantiles_backward(up, low, weights);

            let fd_m = (loss(median + h, up, low) - loss(median - h, up, low)) / (2.0 * h);
            assert!((dm - fd_m).abs() < 1e-6, "median grad {dm} vs fd {fd_m}");
            for i in 0..3 {
                let mut up_p = up;
                let mut up_m = up;
                up_p[i] += h;
                up_m[i] -= h;
                let fd = (loss(median, up_p, low) - loss(median, up_m, low)) / (2.0 * h);
                assert!((du[i] - fd).abs() < 1e-6);

                let mut low_p = low;
                let mut low_m = low;
                low_p[i] += h;
                low_m[i] -= h;
                let fd = (loss(median, up, low_p) - loss(median, up, low_m)) / (2.0 * h);
                assert!((dl[i] - fd).abs() < 1e-6);
            }
        }
    }
}
