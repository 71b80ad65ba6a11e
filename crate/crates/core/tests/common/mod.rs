//! Shared test-side oracles, kept independent of the library's
//! implementation paths.

// Each test binary compiles this module separately and uses a subset.
#![allow(dead_code)]

use std::collections::BTreeSet;

use tempagg::evaluate::PredictionMatrix;
use tempagg::sampler::EndRule;

/// Independent two-loop reimplementation of the pooling contract:
/// partition the scope, gather members per sub-interval, max-pool,
/// borrow the nearest in-scope frame (earlier on ties) when empty.
/// Returns `None` when the scope holds no frames.
pub fn oracle_pool(
    timestamps: &[f64],
    features: &[f32],
    dim: usize,
    scope: (f64, f64),
    count: usize,
    rule: EndRule,
) -> Option<Vec<f32>> {
    let (start, end) = scope;
    let in_scope: Vec<usize> = (0..timestamps.len())
        .filter(|&i| {
            let ts = timestamps[i];
            ts >= start
                && match rule {
                    EndRule::Inclusive => ts <= end,
                    EndRule::Exclusive => ts < end,
                }
        })
        .collect();
    if in_scope.is_empty() {
        return None;
    }
    let width = (end - start) / count as f64;
    let mut out = Vec::with_capacity(count * dim);
    for k in 0..count {
        let lo = start + k as f64 * width;
        let hi = if k + 1 == count { end } else { start + (k + 1) as f64 * width };
        let members: Vec<usize> = in_scope
            .iter()
            .copied()
            .filter(|&i| {
                let ts = timestamps[i];
                if k + 1 == count && rule == EndRule::Inclusive {
                    ts >= lo && ts <= hi
                } else {
                    ts >= lo && ts < hi
                }
            })
            .collect();
        let chosen: Vec<usize> = if members.is_empty() {
            let dist = |i: usize| {
                let ts = timestamps[i];
                if ts < lo {
                    lo - ts
                } else if ts > hi {
                    ts - hi
                } else {
                    0.0
                }
            };
            let mut best = in_scope[0];
            for &i in &in_scope[1..] {
                if dist(i) < dist(best) {
                    best = i;
                }
            }
            vec![best]
        } else {
            members
        };
        for d in 0..dim {
            let mut m = f32::NEG_INFINITY;
            for &i in &chosen {
                m = m.max(features[i * dim + d]);
            }
            out.push(m);
        }
    }
    Some(out)
}

/// Sort-based top-k oracle: classes ordered by (score desc, index asc).
pub fn oracle_topk(preds: &PredictionMatrix, labels: &[usize], k: usize) -> f64 {
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = preds.row(i);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[..k].contains(&label) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / labels.len() as f64
}

/// Per-class counting oracle for class-mean top-k recall.
pub fn oracle_class_mean_recall(
    preds: &PredictionMatrix,
    labels: &[usize],
    k: usize,
    subset: Option<&BTreeSet<usize>>,
) -> Option<f64> {
    let classes: BTreeSet<usize> = labels
        .iter()
        .copied()
        .filter(|c| subset.is_none_or(|s| s.contains(c)))
        .collect();
    if classes.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &c in &classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let sub_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let sub = preds.select(&idx);
        total += oracle_topk(&sub, &sub_labels, k) / 100.0;
    }
    Some(100.0 * total / classes.len() as f64)
}
