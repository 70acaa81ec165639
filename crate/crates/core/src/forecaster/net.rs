//! The attention forecaster: parameter layout, forward pass, and exact
//! reverse-mode backward pass.
//!
//! Activations are rows. The per-timestep input is the concatenation of the
//! twelve standardized continuous features with the hour/day/month embedding
//! rows; a linear projection lifts it to the hidden width, one or more
//! self-attention blocks (scaled dot-product attention, residual, GELU
//! feed-forward, residual) mix the positions, and the representation at the
//! final position feeds the mean head and the monotone-quantile head.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureSet;
use super::quantiles::decode_quantiles;
use super::ModelConfig;
use crate::timeseries::{CONTINUOUS_FEATURES, TARGET_CHANNELS};

pub(crate) const HOUR_TABLE: usize = 24;
pub(crate) const DAY_TABLE: usize = 31;
pub(crate) const MONTH_TABLE: usize = 12;

/// Seven quantile-head outputs per channel: median, three raw upper
/// increments, three raw lower increments.
pub(crate) const QUANT_HEAD_PER_CHANNEL: usize = 7;
pub(crate) const QUANT_HEAD_WIDTH: usize = TARGET_CHANNELS * QUANT_HEAD_PER_CHANNEL;

/// Static shape information derived from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub window: usize,
    pub input: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff: usize,
    pub hour_embed: usize,
    pub day_embed: usize,
    pub month_embed: usize,
    pub blocks: usize,
}

impl Dims {
    pub fn from_config(config: &ModelConfig) -> Self {
        Dims {
            window: config.window,
            input: CONTINUOUS_FEATURES
                + config.hour_embed
                + config.day_embed
                + config.month_embed,
            hidden: config.hidden,
            heads: config.heads,
            head_dim: config.hidden / config.heads,
            ff: config.ff_dim,
            hour_embed: config.hour_embed,
            day_embed: config.day_embed,
            month_embed: config.month_embed,
            blocks: config.blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockParams {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

/// All learnable parameters. The flat canonical order is the field order
/// below, row-major within each array.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub emb_hour: Array2<f64>,
    pub emb_day: Array2<f64>,
    pub emb_month: Array2<f64>,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    pub w_mean: Array2<f64>,
    pub b_mean: Array1<f64>,
    pub w_quant: Array2<f64>,
    pub b_quant: Array1<f64>,
}

impl Params {
    pub fn zeros(d: &Dims) -> Self {
        let block = |_| BlockParams {
            w_q: Array2::zeros((d.hidden, d.hidden)),
            b_q: Array1::zeros(d.hidden),
            w_k: Array2::zeros((d.hidden, d.hidden)),
            b_k: Array1::zeros(d.hidden),
            w_v: Array2::zeros((d.hidden, d.hidden)),
            b_v: Array1::zeros(d.hidden),
            w_o: Array2::zeros((d.hidden, d.hidden)),
            b_o: Array1::zeros(d.hidden),
            w_ff1: Array2::zeros((d.hidden, d.ff)),
            b_ff1: Array1::zeros(d.ff),
            w_ff2: Array2::zeros((d.ff, d.hidden)),
            b_ff2: Array1::zeros(d.hidden),
        };
        Params {
            emb_hour: Array2::zeros((HOUR_TABLE, d.hour_embed)),
            emb_day: Array2::zeros((DAY_TABLE, d.day_embed)),
            emb_month: Array2::zeros((MONTH_TABLE, d.month_embed)),
            w_in: Array2::zeros((d.input, d.hidden)),
            b_in: Array1::zeros(d.hidden),
            blocks: (0..d.blocks).map(block).collect(),
            w_mean: Array2::zeros((d.hidden, TARGET_CHANNELS)),
            b_mean: Array1::zeros(TARGET_CHANNELS),
            w_quant: Array2::zeros((d.hidden, QUANT_HEAD_WIDTH)),
            b_quant: Array1::zeros(QUANT_HEAD_WIDTH),
        }
    }

    /// Seeded initialization, uniform in +/- 1/sqrt(fan-in). Embedding tables
    /// use the embedding width as fan-in; biases start at zero. The draw
    /// order is the canonical parameter order, so identical (config, seed)
    /// pairs produce bit-identical parameters.
    pub fn init(d: &Dims, seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut p = Params::zeros(d);
        let mut fill = |a: &mut Array2<f64>, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for v in a.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        };
        fill(&mut p.emb_hour, d.hour_embed);
        fill(&mut p.emb_day, d.day_embed);
        fill(&mut p.emb_month, d.month_embed);
        fill(&mut p.w_in, d.input);
        for b in p.blocks.iter_mut() {
            fill(&mut b.w_q, d.hidden);
            fill(&mut b.w_k, d.hidden);
            fill(&mut b.w_v, d.hidden);
            fill(&mut b.w_o, d.hidden);
            fill(&mut b.w_ff1, d.hidden);
            fill(&mut b.w_ff2, d.ff);
        }
        fill(&mut p.w_mean, d.hidden);
        fill(&mut p.w_quant, d.hidden);
        p
    }

    pub fn count(d: &Dims) -> usize {
        let per_block = 4 * (d.hidden * d.hidden + d.hidden)
            + d.hidden * d.ff
            + d.ff
            + d.ff * d.hidden
            + d.hidden;
        HOUR_TABLE * d.hour_embed
            + DAY_TABLE * d.day_embed
            + MONTH_TABLE * d.month_embed
            + d.input * d.hidden
            + d.hidden
            + d.blocks * per_block
            + d.hidden * TARGET_CHANNELS
            + TARGET_CHANNELS
            + d.hidden * QUANT_HEAD_WIDTH
            + QUANT_HEAD_WIDTH
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let push2 = |out: &mut Vec<f64>, a: &Array2<f64>| out.extend(a.iter());
        let push1 = |out: &mut Vec<f64>, a: &Array1<f64>| out.extend(a.iter());
        push2(&mut out, &self.emb_hour);
        push2(&mut out, &self.emb_day);
        push2(&mut out, &self.emb_month);
        push2(&mut out, &self.w_in);
        push1(&mut out, &self.b_in);
        for b in &self.blocks {
            push2(&mut out, &b.w_q);
            push1(&mut out, &b.b_q);
            push2(&mut out, &b.w_k);
            push1(&mut out, &b.b_k);
            push2(&mut out, &b.w_v);
            push1(&mut out, &b.b_v);
            push2(&mut out, &b.w_o);
            push1(&mut out, &b.b_o);
            push2(&mut out, &b.w_ff1);
            push1(&mut out, &b.b_ff1);
            push2(&mut out, &b.w_ff2);
            push1(&mut out, &b.b_ff2);
        }
        push2(&mut out, &self.w_mean);
        push1(&mut out, &self.b_mean);
        push2(&mut out, &self.w_quant);
        push1(&mut out, &self.b_quant);
        out
    }

    pub fn from_flat(d: &Dims, flat: &[f64]) -> Option<Self> {
        if flat.len() != Self::count(d) {
            return None;
        }
        let mut pos = 0;
        let take2 = |rows: usize, cols: usize, pos: &mut usize| {
            let a = Array2::from_shape_vec((rows, cols), flat[*pos..*pos + rows * cols].to_vec())
                .expect("shape matches slice length");
            *pos += rows * cols;
            a
        };
        let take1 = |len: usize, pos: &mut usize| {
            let a = Array1::from_vec(flat[*pos..*pos + len].to_vec());
            *pos += len;
            a
        };
        let emb_hour = take2(HOUR_TABLE, d.hour_embed, &mut pos);
        let emb_day = take2(DAY_TABLE, d.day_embed, &mut pos);
        let emb_month = take2(MONTH_TABLE, d.month_embed, &mut pos);
        let w_in = take2(d.input, d.hidden, &mut pos);
        let b_in = take1(d.hidden, &mut pos);
        let mut blocks = Vec::with_capacity(d.blocks);
        for _ in 0..d.blocks {
            blocks.push(BlockParams {
                w_q: take2(d.hidden, d.hidden, &mut pos),
                b_q: take1(d.hidden, &mut pos),
                w_k: take2(d.hidden, d.hidden, &mut pos),
                b_k: take1(d.hidden, &mut pos),
                w_v: take2(d.hidden, d.hidden, &mut pos),
                b_v: take1(d.hidden, &mut pos),
                w_o: take2(d.hidden, d.hidden, &mut pos),
                b_o: take1(d.hidden, &mut pos),
                w_ff1: take2(d.hidden, d.ff, &mut pos),
                b_ff1: take1(d.ff, &mut pos),
                w_ff2: take2(d.ff, d.hidden, &mut pos),
                b_ff2: take1(d.hidden, &mut pos),
            });
        }
        let w_mean = take2(d.hidden, TARGET_CHANNELS, &mut pos);
        let b_mean = take1(TARGET_CHANNELS, &mut pos);
        let w_quant = take2(d.hidden, QUANT_HEAD_WIDTH, &mut pos);
        let b_quant = take1(QUANT_HEAD_WIDTH, &mut pos);
        debug_assert_eq!(pos, flat.len());
        Some(Params {
            emb_hour,
            emb_day,
            emb_month,
            w_in,
            b_in,
            blocks,
            w_mean,
            b_mean,
            w_quant,
            b_quant,
        })
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(mut s: Array2<f64>) -> Array2<f64> {
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    s
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a = a.insert_axis(Axis(1));
    let b = b.insert_axis(Axis(0));
    a.dot(&b)
}

pub(crate) struct BlockCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    x_mid: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ffn_mask: Option<Array2<f64>>,
}

/// Everything backward needs from a single window's forward pass.
pub(crate) struct ForwardCache {
    feat: Array2<f64>,
    fingerprints: Vec<[usize; 3]>,
    blocks: Vec<BlockCache>,
    readout: Array1<f64>,
    pub mean_std: [f64; TARGET_CHANNELS],
    pub quant_raw: [f64; QUANT_HEAD_WIDTH],
}

impl ForwardCache {
    /// Standardized quantiles per channel, decoded from the raw head outputs.
    pub fn quantiles_std(&self) -> [[f64; 7]; TARGET_CHANNELS] {
        let mut out = [[0.0; 7]; TARGET_CHANNELS];
        for (c, q) in out.iter_mut().enumerate() {
            let raw = &self.quant_raw[c * QUANT_HEAD_PER_CHANNEL..(c + 1) * QUANT_HEAD_PER_CHANNEL];
            *q = decode_quantiles(raw[0], [raw[1], raw[2], raw[3]], [raw[4], raw[5], raw[6]]);
        }
        out
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rate: f64, rows: usize, cols: usize) -> Array2<f64> {
    let keep = 1.0 - rate;
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = if rng.random_range(0.0..1.0) < rate {
            0.0
        } else {
            1.0 / keep
        };
    }
    m
}

/// Runs the forecaster over one window of encoded features.
///
/// `dropout` is only supplied by the training loop; inference passes `None`
/// and is fully deterministic.
pub(crate) fn forward(
    params: &Params,
    dims: &Dims,
    features: &FeatureSet,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> ForwardCache {
    let t = features.continuous.nrows();
    debug_assert_eq!(t, dims.window);

    // assemble the full input rows: continuous features then embeddings
    let mut feat = Array2::zeros((t, dims.input));
    feat.slice_mut(s![.., 0..CONTINUOUS_FEATURES])
        .assign(&features.continuous);
    for (i, fp) in features.fingerprints.iter().enumerate() {
        let mut offset = CONTINUOUS_FEATURES;
        for (table, idx, width) in [
            (&params.emb_hour, fp[0], dims.hour_embed),
            (&params.emb_day, fp[1], dims.day_embed),
            (&params.emb_month, fp[2], dims.month_embed),
        ] {
            feat.slice_mut(s![i, offset..offset + width])
                .assign(&table.row(idx));
            offset += width;
        }
    }

    let mut x = feat.dot(&params.w_in) + &params.b_in;
    let mut dropout = dropout;
    let inv_sqrt = 1.0 / (dims.head_dim as f64).sqrt();

    let mut blocks = Vec::with_capacity(dims.blocks);
    for bp in &params.blocks {
        let q = x.dot(&bp.w_q) + &bp.b_q;
        let k = x.dot(&bp.w_k) + &bp.b_k;
        let v = x.dot(&bp.w_v) + &bp.b_v;

        let mut concat = Array2::zeros((t, dims.hidden));
        let mut attn = Vec::with_capacity(dims.heads);
        for h in 0..dims.heads {
            let cols = h * dims.head_dim..(h + 1) * dims.head_dim;
            let q_h = q.slice(s![.., cols.clone()]);
            let k_h = k.slice(s![.., cols.clone()]);
            let v_h = v.slice(s![.., cols.clone()]);
            let scores = q_h.dot(&k_h.t()) * inv_sqrt;
            let a = softmax_rows(scores);
            concat.slice_mut(s![.., cols]).assign(&a.dot(&v_h));
            attn.push(a);
        }

        let mut attn_out = concat.dot(&bp.w_o) + &bp.b_o;
        let attn_mask = dropout.as_mut().map(|(rng, rate)| {
            let m = dropout_mask(rng, *rate, t, dims.hidden);
            attn_out *= &m;
            m
        });
        let x_mid = &x + &attn_out;

        let ff_pre = x_mid.dot(&bp.w_ff1) + &bp.b_ff1;
        let ff_act = ff_pre.mapv(gelu);
        let mut ff_out = ff_act.dot(&bp.w_ff2) + &bp.b_ff2;
        let ffn_mask = dropout.as_mut().map(|(rng, rate)| {
            let m = dropout_mask(rng, *rate, t, dims.hidden);
            ff_out *= &m;
            m
        });
        let x_next = &x_mid + &ff_out;

        blocks.push(BlockCache {
            x,
            q,
            k,
            v,
            attn,
            concat,
            x_mid,
            ff_pre,
            ff_act,
            attn_mask,
            ffn_mask,
        });
        x = x_next;
    }

    let readout = x.row(t - 1).to_owned();
    let mean_vec = readout.dot(&params.w_mean) + &params.b_mean;
    let quant_vec = readout.dot(&params.w_quant) + &params.b_quant;

    let mut mean_std = [0.0; TARGET_CHANNELS];
    mean_std.copy_from_slice(mean_vec.as_slice().expect("contiguous"));
    let mut quant_raw = [0.0; QUANT_HEAD_WIDTH];
    quant_raw.copy_from_slice(quant_vec.as_slice().expect("contiguous"));

    ForwardCache {
        feat,
        fingerprints: features.fingerprints.clone(),
        blocks,
        readout,
        mean_std,
        quant_raw,
    }
}

/// Accumulates the gradient of a scalar loss into `grads`, given the loss
/// gradients with respect to the mean head and the raw quantile head.
///
/// `d_quant_raw` is expressed against the raw head outputs; callers that
/// differentiate against decoded quantiles go through
/// [`decode_quantiles_backward`] first (see `loss.rs`).
pub(crate) fn backward(
    params: &Params,
    dims: &Dims,
    cache: &ForwardCache,
    d_mean: [f64; TARGET_CHANNELS],
    d_quant_raw: [f64; QUANT_HEAD_WIDTH],
    grads: &mut Params,
) {
    let t = dims.window;
    let inv_sqrt = 1.0 / (dims.head_dim as f64).sqrt();

    let d_mean = Array1::from_vec(d_mean.to_vec());
    let d_quant = Array1::from_vec(d_quant_raw.to_vec());

    grads.w_mean += &outer(cache.readout.view(), d_mean.view());
    grads.b_mean += &d_mean;
    grads.w_quant += &outer(cache.readout.view(), d_quant.view());
    grads.b_quant += &d_quant;

    let d_readout = params.w_mean.dot(&d_mean) + params.w_quant.dot(&d_quant);

    let mut d_x = Array2::zeros((t, dims.hidden));
    d_x.row_mut(t - 1).assign(&d_readout);

    for (bp, bc, gb) in itertools_rev(&params.blocks, &cache.blocks, &mut grads.blocks) {
        // feed-forward sublayer: x_next = x_mid + mask .* (gelu(x_mid W1 + b1) W2 + b2)
        let mut d_ff_out = d_x.clone();
        if let Some(m) = &bc.ffn_mask {
            d_ff_out *= m;
        }
        let d_ff_act = d_ff_out.dot(&bp.w_ff2.t());
        gb.w_ff2 += &bc.ff_act.t().dot(&d_ff_out);
        gb.b_ff2 += &d_ff_out.sum_axis(Axis(0));
        let d_ff_pre = &d_ff_act * &bc.ff_pre.mapv(gelu_prime);
        gb.w_ff1 += &bc.x_mid.t().dot(&d_ff_pre);
        gb.b_ff1 += &d_ff_pre.sum_axis(Axis(0));
        let mut d_x_mid = d_x; // residual path
        d_x_mid += &d_ff_pre.dot(&bp.w_ff1.t());

        // attention sublayer: x_mid = x + mask .* (concat(heads) W_o + b_o)
        let mut d_attn_out = d_x_mid.clone();
        if let Some(m) = &bc.attn_mask {
            d_attn_out *= m;
        }
        let d_concat = d_attn_out.dot(&bp.w_o.t());
        gb.w_o += &bc.concat.t().dot(&d_attn_out);
        gb.b_o += &d_attn_out.sum_axis(Axis(0));

        let mut d_q = Array2::zeros((t, dims.hidden));
        let mut d_k = Array2::zeros((t, dims.hidden));
        let mut d_v = Array2::zeros((t, dims.hidden));
        for h in 0..dims.heads {
            let cols = h * dims.head_dim..(h + 1) * dims.head_dim;
            let a = &bc.attn[h];
            let q_h = bc.q.slice(s![.., cols.clone()]);
            let k_h = bc.k.slice(s![.., cols.clone()]);
            let v_h = bc.v.slice(s![.., cols.clone()]);
            let d_head = d_concat.slice(s![.., cols.clone()]);

            let d_a = d_head.dot(&v_h.t());
            d_v.slice_mut(s![.., cols.clone()])
                .assign(&a.t().dot(&d_head));

            // softmax rows: d_s = a .* (d_a - rowsum(d_a .* a))
            let mut d_s = d_a;
            for (mut ds_row, a_row) in d_s.rows_mut().into_iter().zip(a.rows()) {
                let dot: f64 = ds_row.iter().zip(a_row.iter()).map(|(x, y)| x * y).sum();
                for (v, &a_v) in ds_row.iter_mut().zip(a_row.iter()) {
                    *v = a_v * (*v - dot);
                }
            }
            d_q.slice_mut(s![.., cols.clone()])
                .assign(&(d_s.dot(&k_h) * inv_sqrt));
            d_k.slice_mut(s![.., cols])
                .assign(&(d_s.t().dot(&q_h) * inv_sqrt));
        }

        gb.w_q += &bc.x.t().dot(&d_q);
        gb.b_q += &d_q.sum_axis(Axis(0));
        gb.w_k += &bc.x.t().dot(&d_k);
        gb.b_k += &d_k.sum_axis(Axis(0));
        gb.w_v += &bc.x.t().dot(&d_v);
        gb.b_v += &d_v.sum_axis(Axis(0));

        let mut d_x_prev = d_x_mid; // residual path
        d_x_prev += &d_q.dot(&bp.w_q.t());
        d_x_prev += &d_k.dot(&bp.w_k.t());
        d_x_prev += &d_v.dot(&bp.w_v.t());
        d_x = d_x_prev;
    }

    // projection and embeddings
    grads.w_in += &cache.feat.t().dot(&d_x);
    grads.b_in += &d_x.sum_axis(Axis(0));
    let d_feat = d_x.dot(&params.w_in.t());
    for (i, fp) in cache.fingerprints.iter().enumerate() {
        let mut offset = CONTINUOUS_FEATURES;
        for (table, idx, width) in [
            (&mut grads.emb_hour, fp[0], dims.hour_embed),
            (&mut grads.emb_day, fp[1], dims.day_embed),
            (&mut grads.emb_month, fp[2], dims.month_embed),
        ] {
            let mut row = table.row_mut(idx);
            row += &d_feat.slice(s![i, offset..offset + width]);
            offset += width;
        }
    }
}

/// Reverse zipped iteration over block params, caches, and grad blocks.
fn itertools_rev<'a>(
    params: &'a [BlockParams],
    caches: &'a [BlockCache],
    grads: &'a mut [BlockParams],
) -> impl Iterator<Item = (&'a BlockParams, &'a BlockCache, &'a mut BlockParams)> {
    params
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((p, c), g)| (p, c, g))
}
