//! Classification metrics: accuracy, macro precision/recall/F1 and
//! one-vs-rest macro AUROC/AUPRC, plus multi-seed aggregation.
//!
//! Conventions:
//! - precision/recall/F1 are averaged over the classes that occur in the
//!   ground truth or the predictions; a class with no predicted (or no
//!   true) members scores 0 for the undefined ratio.
//! - AUROC counts tied positive/negative pairs as one half.
//! - AUPRC is average precision, `Σ (Rₙ − Rₙ₋₁)·Pₙ` over distinct score
//!   thresholds (step interpolation, not the trapezoid rule).
//! - Classes absent from the ground truth are skipped for AUROC/AUPRC
//!   with a logged warning.
//! - Standard deviations over seeds use the `n − 1` denominator.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const METRICS_SCHEMA: &str = "tech-metrics/v1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub auroc_macro: f64,
    pub auprc_macro: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 6] = [
        "accuracy",
        "precision_macro",
        "recall_macro",
        "f1_macro",
        "auroc_macro",
        "auprc_macro",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.accuracy,
            self.precision_macro,
            self.recall_macro,
            self.f1_macro,
            self.auroc_macro,
            self.auprc_macro,
        ]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self {
            accuracy: v[0],
            precision_macro: v[1],
            recall_macro: v[2],
            f1_macro: v[3],
            auroc_macro: v[4],
            auprc_macro: v[5],
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Row-wise softmax of a `[N×K]` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter_mut().map(|v| {
            *v = (*v - max).exp();
            *v
        }).sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_counts(preds: &[usize], labels: &[usize], classes: usize) -> Vec<ClassCounts> {
    let mut counts = vec![ClassCounts::default(); classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            counts[y].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[y].fn_ += 1;
        }
    }
    counts
}

/// Macro precision, recall and F1 over classes seen in truth or predictions.
pub fn macro_prf(preds: &[usize], labels: &[usize], classes: usize) -> (f64, f64, f64) {
    let counts = class_counts(preds, labels, classes);
    let seen: Vec<&ClassCounts> = counts.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).collect();
    if seen.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = seen.len() as f64;
    let p = seen.iter().map(|c| c.precision()).sum::<f64>() / n;
    let r = seen.iter().map(|c| c.recall()).sum::<f64>() / n;
    let f = seen.iter().map(|c| c.f1()).sum::<f64>() / n;
    (p, r, f)
}

pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    macro_prf(preds, labels, classes).2
}

fn check_binary(scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(Error::Shape {
            op: "binary_metric",
            lhs: vec![scores.len()],
            rhs: vec![positive.len()],
        });
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Data("AUROC/AUPRC need both positive and negative samples".into()));
    }
    Ok((p, n))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve via the Mann-Whitney statistic with mid-ranks.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, n) = check_binary(scores, positive)?;
    // Walk from the highest score down; every negative in a lower group is
    // beaten by every positive above it.
    let mut negatives_below = n as f64;
    let mut concordant = 0.0;
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| positive[i]).count() as f64;
        let gn = group.len() as f64 - gp;
        negatives_below -= gn;
        concordant += gp * negatives_below + 0.5 * gp * gn;
    }
    Ok(concordant / (p as f64 * n as f64))
}

/// Average precision over distinct score thresholds.
pub fn auprc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, _) = check_binary(scores, positive)?;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for group in tie_groups(scores) {
        tp += group.iter().filter(|&&i| positive[i]).count();
        seen += group.len();
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// All six metrics from class probabilities `[N×K]` and true labels.
pub fn evaluate_scores(probs: &Tensor, labels: &[usize]) -> Result<Metrics> {
    if probs.rank() != 2 || probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: probs.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let k = probs.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label { label: bad, classes: k });
    }
    let preds: Vec<usize> = (0..labels.len()).map(|i| argmax(probs.row(i))).collect();
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    let (precision, recall, f1) = macro_prf(&preds, labels, k);

    let mut aurocs = Vec::new();
    let mut auprcs = Vec::new();
    for c in 0..k {
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if !positive.iter().any(|&b| b) {
            log::warn!("class {c} absent from ground truth; excluded from macro AUROC/AUPRC");
            continue;
        }
        if positive.iter().all(|&b| b) {
            log::warn!("class {c} is the only class present; AUROC/AUPRC undefined");
            continue;
        }
        let scores: Vec<f64> = (0..labels.len()).map(|i| probs.at(i, c)).collect();
        aurocs.push(auroc_binary(&scores, &positive)?);
        auprcs.push(auprc_binary(&scores, &positive)?);
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        precision_macro: precision,
        recall_macro: recall,
        f1_macro: f1,
        auroc_macro: mean(&aurocs),
        auprc_macro: mean(&auprcs),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

/// Mean and sample standard deviation (`n − 1`) over per-seed reports.
pub fn aggregate(seeds: &[u64], per_seed: &[Metrics]) -> Result<MetricsReport> {
    if seeds.is_empty() || seeds.len() != per_seed.len() {
        return Err(Error::Data(format!(
            "{} seeds for {} reports",
            seeds.len(),
            per_seed.len()
        )));
    }
    let n = per_seed.len() as f64;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for m in per_seed {
        for (acc, v) in mean.iter_mut().zip(m.values()) {
            *acc += v / n;
        }
    }
    if per_seed.len() > 1 {
        for m in per_seed {
            for ((acc, v), mu) in std.iter_mut().zip(m.values()).zip(mean) {
                *acc += (v - mu) * (v - mu) / (n - 1.0);
            }
        }
        std.iter_mut().for_each(|v| *v = v.sqrt());
    }
    Ok(MetricsReport {
        seeds: seeds.to_vec(),
        per_seed: per_seed.to_vec(),
        mean: Metrics::from_values(mean),
        std: Metrics::from_values(std),
    })
}

impl MetricsReport {
    /// Flat JSON object: `<metric>_mean`, `<metric>_std`, `<metric>_per_seed`.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("schema".into(), json!(METRICS_SCHEMA));
        map.insert("seeds".into(), json!(self.seeds));
        let (mean, std) = (self.mean.values(), self.std.values());
        for (i, name) in Metrics::NAMES.iter().enumerate() {
            map.insert(format!("{name}_mean"), json!(mean[i]));
            map.insert(format!("{name}_std"), json!(std[i]));
            let per: Vec<f64> = self.per_seed.iter().map(|m| m.values()[i]).collect();
            map.insert(format!("{name}_per_seed"), json!(per));
        }
        Value::Object(map)
    }
}
