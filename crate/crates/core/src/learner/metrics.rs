//! Clustering agreement scores.

use std::collections::BTreeMap;

fn contingency(a: &[usize], b: &[usize]) -> (BTreeMap<(usize, usize), f64>, BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    assert_eq!(a.len(), b.len(), "label sequences must have equal length");
    let mut joint = BTreeMap::new();
    let mut ra = BTreeMap::new();
    let mut rb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ra.entry(x).or_insert(0.0) += 1.0;
        *rb.entry(y).or_insert(0.0) += 1.0;
    }
    (joint, ra, rb)
}

fn entropy(counts: &BTreeMap<usize, f64>, n: f64) -> f64 {
    counts.values().map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Two single-cluster labelings are identical and score 1; a single cluster
/// against anything else scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let (joint, ra, rb) = contingency(a, b);
    let (ha, hb) = (entropy(&ra, n), entropy(&rb, n));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        mi += (c / n) * (c * n / (ra[&x] * rb[&y])).ln();
    }
    (mi / (0.5 * (ha + hb))).clamp(0.0, 1.0)
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return 1.0;
    }
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sa: f64 = ra.values().map(|&c| comb2(c)).sum();
    let sb: f64 = rb.values().map(|&c| comb2(c)).sum();
    let expected = sa * sb / comb2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Mean row L1 distance between a learned transition matrix and a reference
/// one over true labels. Each true label is mapped to the learned place most
/// of its events received; the mapped rows are renormalized over the mapped
/// columns.
pub fn transition_l1(psi: &[Vec<f64>], truth: &[usize], learned: &[usize], reference: &[Vec<f64>]) -> f64 {
    assert_eq!(truth.len(), learned.len(), "label sequences must have equal length");
    let r = reference.len();
    let mut votes = vec![BTreeMap::<usize, usize>::new(); r];
    for (&t, &l) in truth.iter().zip(learned) {
        *votes[t].entry(l).or_insert(0) += 1;
    }
    let map: Vec<Option<usize>> = votes
        .iter()
        .map(|v| v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&k, _)| k))
        .collect();
    let mut total = 0.0;
    for (a, row) in reference.iter().enumerate() {
        let est: Vec<f64> = match map[a] {
            Some(ka) => map.iter().map(|mb| mb.map_or(0.0, |kb| psi[ka][kb])).collect(),
            None => vec![0.0; r],
        };
        let z: f64 = est.iter().sum();
        total += row
            .iter()
            .zip(&est)
            .map(|(p, q)| (p - if z > 0.0 { q / z } else { 0.0 }).abs())
            .sum::<f64>();
    }
    total / r as f64
}
