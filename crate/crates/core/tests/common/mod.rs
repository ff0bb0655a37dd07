//! Shared helpers for the integration tests: straightforward scalar
//! re-implementations used as oracles, plus fixtures.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use tech_core::layers::{AttentionLayer, CotarLayer, Linear};
use tech_core::{ParamStore, SeedRng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

/// Overwrites every parameter (biases included) with U(-0.5, 0.5) draws.
pub fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
}

pub fn random_mat(rows: usize, cols: usize, r: &mut SeedRng) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m)
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// `x·W + b` entry by entry, reading `W[in×out]` and `b[out]` from the store.
pub fn affine(store: &ParamStore, lin: &Linear, x: &Mat) -> Mat {
    let w = store.get(lin.weight);
    let b = store.get(lin.bias);
    let (fan_in, fan_out) = (w.rows(), w.cols());
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), fan_in);
            (0..fan_out)
                .map(|j| {
                    let mut acc = b.data()[j];
                    for (i, xi) in row.iter().enumerate() {
                        acc += xi * w.at(i, j);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn map(m: &Mat, f: fn(f64) -> f64) -> Mat {
    m.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

/// Core aggregation then redistribution, written out loop by loop.
pub fn cotar_oracle(store: &ParamStore, layer: &CotarLayer, o: &Mat) -> Mat {
    let (core, _) = core_token_oracle(store, layer, o);
    let joined: Mat = o
        .iter()
        .map(|row| row.iter().chain(core.iter()).copied().collect())
        .collect();
    affine(store, &layer.lin4, &map(&affine(store, &layer.lin3, &joined), gelu))
}

/// Core token and the per-dimension token-axis softmax weights.
pub fn core_token_oracle(store: &ParamStore, layer: &CotarLayer, o: &Mat) -> (Vec<f64>, Mat) {
    let scores = affine(store, &layer.lin2, &map(&affine(store, &layer.lin1, o), gelu));
    let s = scores.len();
    let dc = scores[0].len();
    let mut weights = vec![vec![0.0; dc]; s];
    let mut core = vec![0.0; dc];
    for j in 0..dc {
        let max = (0..s).map(|i| scores[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..s).map(|i| (scores[i][j] - max).exp()).sum();
        for i in 0..s {
            weights[i][j] = (scores[i][j] - max).exp() / z;
            core[j] += scores[i][j] * weights[i][j];
        }
    }
    (core, weights)
}

pub fn attention_oracle(store: &ParamStore, layer: &AttentionLayer, o: &Mat) -> Mat {
    let q = affine(store, &layer.query, o);
    let k = affine(store, &layer.key, o);
    let v = affine(store, &layer.value, o);
    let s = o.len();
    let d = layer.dim as f64;
    (0..s)
        .map(|i| {
            let logits: Vec<f64> = (0..s)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            (0..layer.dim)
                .map(|c| (0..s).map(|j| (logits[j] - max).exp() / z * v[j][c]).sum())
                .collect()
        })
        .collect()
}

pub fn permute(m: &Mat, perm: &[usize]) -> Mat {
    perm.iter().map(|&i| m[i].clone()).collect()
}

/// Exhaustive pair count: (concordant + ½ tied) / (P·N).
pub fn auroc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Average precision: walk distinct thresholds from high to low and add
/// `precision · Δrecall` at each one.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> f64 {
    let total_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(positive).filter(|(s, p)| **s >= t && **p).count() as f64;
        let fp = scores.iter().zip(positive).filter(|(s, p)| **s >= t && !**p).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}
