//! Forward-filter backward-sample over a discrete first-order chain.
//!
//! The unnormalized joint is
//! `init[s_0] + node[0][s_0] + Σ_{e≥1} (trans[s_{e-1}][s_e] + node[e][s_e])`,
//! all in log space.

use rand::Rng;

use crate::scalar::{log_sum_exp, sample_log_categorical, Scalar};

/// Forward messages `alpha[e][k] = log p(s_e = k, evidence_{0..=e})`.
pub fn forward<T: Scalar>(init: &[T], trans: &[Vec<T>], node: &[Vec<T>]) -> Vec<Vec<T>> {
    let k = init.len();
    let mut alpha: Vec<Vec<T>> = Vec::with_capacity(node.len());
    if node.is_empty() {
        return alpha;
    }
    alpha.push((0..k).map(|s| init[s] + node[0][s]).collect());
    let mut buf = vec![T::zero(); k];
    for e in 1..node.len() {
        let prev = &alpha[e - 1];
        let cur: Vec<T> = (0..k)
            .map(|s| {
                for j in 0..k {
                    buf[j] = prev[j] + trans[j][s];
                }
                log_sum_exp(&buf) + node[e][s]
            })
            .collect();
        alpha.push(cur);
    }
    alpha
}

/// Draws one state sequence from the exact posterior of the chain.
pub fn ffbs<T: Scalar, R: Rng + ?Sized>(init: &[T], trans: &[Vec<T>], node: &[Vec<T>], rng: &mut R) -> Vec<usize> {
    let n = node.len();
    if n == 0 {
        return Vec::new();
    }
    let k = init.len();
    let alpha = forward(init, trans, node);
    let mut out = vec![0; n];
    out[n - 1] = sample_log_categorical(&alpha[n - 1], rng);
    let mut w = vec![T::zero(); k];
    for e in (0..n - 1).rev() {
        let next = out[e + 1];
        for j in 0..k {
            w[j] = alpha[e][j] + trans[j][next];
        }
        out[e] = sample_log_categorical(&w, rng);
    }
    out
}

/// Log normalizer of the chain.
pub fn log_partition<T: Scalar>(init: &[T], trans: &[Vec<T>], node: &[Vec<T>]) -> T {
    match forward(init, trans, node).last() {
        Some(a) => log_sum_exp(a),
        None => T::zero(),
    }
}
