//! Lightweight residual 1-D convolutional net: two kernel-3 same-padded
//! convolution blocks with an identity skip connection around the second,
//! global average pooling over time and a sigmoid head.
//!
//! Parameter layout:
//! `k1[filters * channels * 3] | b1[filters] | k2[filters * filters * 3] |
//!  b2[filters] | w[filters] | b[1]`.

use rand_chacha::ChaCha8Rng;

use super::{bce_term, fill_uniform, glorot_bound, sigmoid};
use crate::market_data::FeatureMatrix;

const KERNEL: usize = 3;

pub(super) fn param_len(channels: usize, filters: usize) -> usize {
    filters * channels * KERNEL + filters + filters * filters * KERNEL + filters + filters + 1
}

pub(super) fn glorot_init(
    channels: usize,
    filters: usize,
    params: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    let k1_len = filters * channels * KERNEL;
    let k2_len = filters * filters * KERNEL;
    fill_uniform(
        &mut params[..k1_len],
        glorot_bound(channels * KERNEL, filters * KERNEL),
        rng,
    );
    let k2_start = k1_len + filters;
    fill_uniform(
        &mut params[k2_start..k2_start + k2_len],
        glorot_bound(filters * KERNEL, filters * KERNEL),
        rng,
    );
    let w_start = k2_start + k2_len + filters;
    fill_uniform(
        &mut params[w_start..w_start + filters],
        glorot_bound(filters, 1),
        rng,
    );
}

struct Split<'a> {
    k1: &'a [f64],
    b1: &'a [f64],
    k2: &'a [f64],
    b2: &'a [f64],
    w: &'a [f64],
    b: f64,
}

fn split<'a>(channels: usize, filters: usize, params: &'a [f64]) -> Split<'a> {
    let k1_len = filters * channels * KERNEL;
    let k2_len = filters * filters * KERNEL;
    let mut at = 0;
    let k1 = &params[at..at + k1_len];
    at += k1_len;
    let b1 = &params[at..at + filters];
    at += filters;
    let k2 = &params[at..at + k2_len];
    at += k2_len;
    let b2 = &params[at..at + filters];
    at += filters;
    let w = &params[at..at + filters];
    at += filters;
    Split {
        k1,
        b1,
        k2,
        b2,
        w,
        b: params[at],
    }
}

struct Activations {
    /// tanh output of the first block, `filters x time` flat.
    a1: Vec<f64>,
    /// tanh of (second convolution + skip), `filters x time` flat.
    a2: Vec<f64>,
    /// global average pool, one value per filter.
    pooled: Vec<f64>,
    y: f64,
}

/// Zero-padded same-length convolution pass shared by forward and backward.
fn run_forward(x: &FeatureMatrix, filters: usize, p: &Split) -> Activations {
    let time = x.rows();
    let channels = x.cols();
    let mut a1 = vec![0.0; filters * time];
    for f in 0..filters {
        for t in 0..time {
            let mut z = p.b1[f];
            for c in 0..channels {
                for j in 0..KERNEL {
                    let src = t as isize + j as isize - 1;
                    if src >= 0 && (src as usize) < time {
                        z += p.k1[(f * channels + c) * KERNEL + j] * x.get(src as usize, c);
                    }
                }
            }
            a1[f * time + t] = z.tanh();
        }
    }
    let mut a2 = vec![0.0; filters * time];
    for f in 0..filters {
        for t in 0..time {
            let mut z = p.b2[f];
            for c2 in 0..filters {
                for j in 0..KERNEL {
                    let src = t as isize + j as isize - 1;
                    if src >= 0 && (src as usize) < time {
                        z += p.k2[(f * filters + c2) * KERNEL + j] * a1[c2 * time + src as usize];
                    }
                }
            }
            a2[f * time + t] = (z + a1[f * time + t]).tanh();
        }
    }
    let pooled: Vec<f64> = (0..filters)
        .map(|f| a2[f * time..(f + 1) * time].iter().sum::<f64>() / time as f64)
        .collect();
    let mut z = p.b;
    for (w, g) in p.w.iter().zip(&pooled) {
        z += w * g;
    }
    Activations {
        a1,
        a2,
        pooled,
        y: sigmoid(z),
    }
}

pub(super) fn forward(x: &FeatureMatrix, filters: usize, params: &[f64]) -> f64 {
    let p = split(x.cols(), filters, params);
    run_forward(x, filters, &p).y
}

/// Add one sample's parameter gradient into `grad`, returning its loss term.
pub(super) fn loss_grad_accum(
    x: &FeatureMatrix,
    filters: usize,
    params: &[f64],
    label: f64,
    grad: &mut [f64],
) -> f64 {
    let time = x.rows();
    let channels = x.cols();
    let p = split(channels, filters, params);
    let acts = run_forward(x, filters, &p);
    let (loss, dz) = bce_term(acts.y, label);

    let k1_len = filters * channels * KERNEL;
    let k2_len = filters * filters * KERNEL;
    let (gk1, rest) = grad.split_at_mut(k1_len);
    let (gb1, rest) = rest.split_at_mut(filters);
    let (gk2, rest) = rest.split_at_mut(k2_len);
    let (gb2, rest) = rest.split_at_mut(filters);
    let (gw, gb) = rest.split_at_mut(filters);

    gb[0] += dz;
    // Through the head and the average pool.
    let mut ds = vec![0.0; filters * time];
    for f in 0..filters {
        gw[f] += dz * acts.pooled[f];
        let da2 = p.w[f] * dz / time as f64;
        for t in 0..time {
            let a2 = acts.a2[f * time + t];
            ds[f * time + t] = da2 * (1.0 - a2 * a2);
        }
    }
    // Second convolution; the skip adds ds straight onto the first block's
    // output gradient.
    let mut da1 = ds.clone();
    for f in 0..filters {
        for t in 0..time {
            let d = ds[f * time + t];
            gb2[f] += d;
            for c2 in 0..filters {
                for j in 0..KERNEL {
                    let src = t as isize + j as isize - 1;
                    if src >= 0 && (src as usize) < time {
                        gk2[(f * filters + c2) * KERNEL + j] +=
                            d * acts.a1[c2 * time + src as usize];
                        da1[c2 * time + src as usize] += p.k2[(f * filters + c2) * KERNEL + j] * d;
                    }
                }
            }
        }
    }
    // First convolution.
    for f in 0..filters {
        for t in 0..time {
            let a1 = acts.a1[f * time + t];
            let dz1 = da1[f * time + t] * (1.0 - a1 * a1);
            gb1[f] += dz1;
            for c in 0..channels {
                for j in 0..KERNEL {
                    let src = t as isize + j as isize - 1;
                    if src >= 0 && (src as usize) < time {
                        gk1[(f * channels + c) * KERNEL + j] += dz1 * x.get(src as usize, c);
                    }
                }
            }
        }
    }
    loss
}
