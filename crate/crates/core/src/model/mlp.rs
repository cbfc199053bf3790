//! Flattened-window multilayer perceptron: one tanh hidden layer and a
//! sigmoid head.
//!
//! Parameter layout: `w1[hidden * input] | b1[hidden] | w2[hidden] | b2[1]`.

use rand_chacha::ChaCha8Rng;

use super::{bce_term, fill_uniform, glorot_bound, sigmoid};

pub(super) fn param_len(input: usize, hidden: usize) -> usize {
    hidden * input + hidden + hidden + 1
}

pub(super) fn glorot_init(input: usize, hidden: usize, params: &mut [f64], rng: &mut ChaCha8Rng) {
    let w1_len = hidden * input;
    fill_uniform(&mut params[..w1_len], glorot_bound(input, hidden), rng);
    let w2_start = w1_len + hidden;
    fill_uniform(
        &mut params[w2_start..w2_start + hidden],
        glorot_bound(hidden, 1),
        rng,
    );
}

struct Split<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: f64,
}

fn split<'a>(input: usize, hidden: usize, params: &'a [f64]) -> Split<'a> {
    let w1_len = hidden * input;
    Split {
        w1: &params[..w1_len],
        b1: &params[w1_len..w1_len + hidden],
        w2: &params[w1_len + hidden..w1_len + 2 * hidden],
        b2: params[w1_len + 2 * hidden],
    }
}

fn hidden_activations(x: &[f64], hidden: usize, p: &Split) -> Vec<f64> {
    let input = x.len();
    (0..hidden)
        .map(|i| {
            let mut z = p.b1[i];
            for (j, &xj) in x.iter().enumerate() {
                z += p.w1[i * input + j] * xj;
            }
            z.tanh()
        })
        .collect()
}

pub(super) fn forward(x: &[f64], hidden: usize, params: &[f64]) -> f64 {
    let p = split(x.len(), hidden, params);
    let a1 = hidden_activations(x, hidden, &p);
    let mut z2 = p.b2;
    for (w, a) in p.w2.iter().zip(&a1) {
        z2 += w * a;
    }
    sigmoid(z2)
}

/// Add one sample's parameter gradient into `grad`, returning its loss term.
pub(super) fn loss_grad_accum(
    x: &[f64],
    hidden: usize,
    params: &[f64],
    label: f64,
    grad: &mut [f64],
) -> f64 {
    let input = x.len();
    let p = split(input, hidden, params);
    let a1 = hidden_activations(x, hidden, &p);
    let mut z2 = p.b2;
    for (w, a) in p.w2.iter().zip(&a1) {
        z2 += w * a;
    }
    let y = sigmoid(z2);
    let (loss, dz2) = bce_term(y, label);

    let w1_len = hidden * input;
    let (gw1, rest) = grad.split_at_mut(w1_len);
    let (gb1, rest) = rest.split_at_mut(hidden);
    let (gw2, gb2) = rest.split_at_mut(hidden);

    gb2[0] += dz2;
    for i in 0..hidden {
        gw2[i] += dz2 * a1[i];
        let dz1 = p.w2[i] * dz2 * (1.0 - a1[i] * a1[i]);
        gb1[i] += dz1;
        for (j, &xj) in x.iter().enumerate() {
            gw1[i * input + j] += dz1 * xj;
        }
    }
    loss
}
