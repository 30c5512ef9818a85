//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here works on plain `Vec<Vec<f64>>` with explicit per-node
//! and per-pair loops, written straight from the layer equations rather
//! than from the vectorized code under test.

use prock_core::gnn::{Composition, Flow, GnnConfig, NeighborNorm};
use prock_core::head::TaskKind;

pub type Mat = Vec<Vec<f64>>;

fn row_times_mat(row: &[f64], m: &Mat) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (i, &x) in row.iter().enumerate() {
        for j in 0..cols {
            out[j] += x * m[i][j];
        }
    }
    out
}

/// One graph-convolution layer, node by node: each node combines its own
/// embedding with the composed (relation, neighbor) messages arriving
/// along its outgoing edges — and, bidirectionally, its incoming ones —
/// then applies relu; relations are mapped through their own matrix.
#[allow(clippy::too_many_arguments)]
fn loop_layer(
    h: &Mat,
    r: &Mat,
    edges: &[(usize, usize, usize)],
    w_self: &Mat,
    w_adj: &Mat,
    w_adj_fwd: Option<&Mat>,
    w_rel: &Mat,
    cfg: &GnnConfig,
) -> (Mat, Mat) {
    let d = h[0].len();
    let cmp = |a: f64, b: f64| match cfg.composition {
        Composition::Multiply => a * b,
        Composition::Add => a + b,
    };
    let mut h_next = Vec::with_capacity(h.len());
    for v in 0..h.len() {
        let mut agg = vec![0.0; d];
        let mut count = 0usize;
        for &(head, rel, tail) in edges {
            if head == v {
                for i in 0..d {
                    agg[i] += cmp(r[rel][i], h[tail][i]);
                }
                count += 1;
            }
        }
        if cfg.neighbor_norm == NeighborNorm::Mean && count > 0 {
            // Scale by the reciprocal (not a division): mean normalization
            // is defined as multiplication by the inverse-degree matrix.
            let recip = 1.0 / count as f64;
            for a in &mut agg {
                *a *= recip;
            }
        }
        let mut pre = row_times_mat(&h[v], w_self);
        for (p, x) in pre.iter_mut().zip(row_times_mat(&agg, w_adj)) {
            *p += x;
        }
        if cfg.flow == Flow::Bidirectional {
            let w_fwd = w_adj_fwd.expect("bidirectional oracle weights");
            let mut agg_in = vec![0.0; d];
            let mut count_in = 0usize;
            for &(head, rel, tail) in edges {
                if tail == v {
                    for i in 0..d {
                        agg_in[i] += cmp(r[rel][i], h[head][i]);
                    }
                    count_in += 1;
                }
            }
            if cfg.neighbor_norm == NeighborNorm::Mean && count_in > 0 {
                let recip = 1.0 / count_in as f64;
                for a in &mut agg_in {
                    *a *= recip;
                }
            }
            for (p, x) in pre.iter_mut().zip(row_times_mat(&agg_in, w_fwd)) {
                *p += x;
            }
        }
        h_next.push(pre.into_iter().map(|x| x.max(0.0)).collect());
    }
    let r_next = r.iter().map(|row| row_times_mat(row, w_rel)).collect();
    (h_next, r_next)
}

pub struct LoopLayerWeights {
    pub w_self: Mat,
    pub w_adj: Mat,
    pub w_adj_fwd: Option<Mat>,
    pub w_rel: Mat,
}

/// The whole k-layer encoder; with k = 0 the tables pass through.
pub fn loop_gnn(
    h0: &Mat,
    r0: &Mat,
    edges: &[(usize, usize, usize)],
    layers: &[LoopLayerWeights],
    cfg: &GnnConfig,
) -> (Mat, Mat) {
    let mut h = h0.clone();
    let mut r = r0.clone();
    for layer in layers.iter().take(cfg.layers) {
        let (hn, rn) = loop_layer(
            &h,
            &r,
            edges,
            &layer.w_self,
            &layer.w_adj,
            layer.w_adj_fwd.as_ref(),
            &layer.w_rel,
            cfg,
        );
        h = hn;
        r = rn;
    }
    (h, r)
}

/// The prediction head, one arithmetic step per line: per-event linear
/// map, mean pool, relu hidden layer, output map, then the task's link
/// function.
#[allow(clippy::too_many_arguments)]
pub fn loop_head(
    phi: &Mat,
    w1: &Mat,
    w2: &Mat,
    w3: &Mat,
    b1: Option<&[f64]>,
    b2: Option<&[f64]>,
    b3: Option<&[f64]>,
    task: TaskKind,
) -> Vec<f64> {
    let d = w1[0].len();
    let mut pooled = vec![0.0; d];
    for row in phi {
        let mut t = row_times_mat(row, w1);
        if let Some(b) = b1 {
            for (x, bv) in t.iter_mut().zip(b) {
                *x += bv;
            }
        }
        for (p, x) in pooled.iter_mut().zip(t) {
            *p += x;
        }
    }
    if !phi.is_empty() {
        for p in &mut pooled {
            *p /= phi.len() as f64;
        }
    }
    let mut hidden = row_times_mat(&pooled, w2);
    if let Some(b) = b2 {
        for (x, bv) in hidden.iter_mut().zip(b) {
            *x += bv;
        }
    }
    for x in &mut hidden {
        *x = x.max(0.0);
    }
    let mut logits = row_times_mat(&hidden, w3);
    if let Some(b) = b3 {
        for (x, bv) in logits.iter_mut().zip(b) {
            *x += bv;
        }
    }
    match task {
        TaskKind::Binary => logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
        TaskKind::Multiclass(_) => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        }
        TaskKind::Regression => logits,
    }
}

/// AUC by exhaustive pair counting, kept in integer halves so equality
/// with the rank formula can be exact: a positive-negative pair is worth
/// 2 for a win and 1 for a tie, out of `2 · n_pos · n_neg`.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut doubled_wins = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                doubled_wins += 2;
            } else if scores[i] == scores[j] {
                doubled_wins += 1;
            }
        }
    }
    doubled_wins as f64 / (2 * pairs) as f64
}
