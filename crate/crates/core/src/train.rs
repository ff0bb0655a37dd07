//! Mini-batch training with early stopping on validation macro-F1, and
//! evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentBank;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{self, aggregate, Metrics, MetricsReport};
use crate::model::Classifier;
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::SeedRng;

/// Rows per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seeds: (42..=46).collect(),
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
    /// Wall time since training started; the only non-deterministic field.
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_f1,lr,elapsed_ms";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_f1, e.lr, e.elapsed_ms));
    }
    out
}

fn check_split(data: &Dataset, name: &str, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{name} split is empty")));
    }
    if data.classes != classes {
        return Err(Error::Data(format!(
            "{name} split has {} classes, model expects {classes}",
            data.classes
        )));
    }
    Ok(())
}

/// Evaluation-mode logits `[N×K]` for every sample of `data`.
pub fn predict<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<Tensor> {
    let inputs = data.inputs();
    let mut rows = Vec::with_capacity(data.len() * model.classes());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        rows.extend_from_slice(model.predict_logits(chunk)?.data());
    }
    Tensor::new(vec![data.len(), model.classes()], rows)
}

/// All six metrics on `data` from softmax scores.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<Metrics> {
    check_split(data, "evaluation", model.classes())?;
    let probs = metrics::softmax_rows(&predict(model, data)?);
    metrics::evaluate_scores(&probs, &data.labels())
}

fn validation_f1<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    let logits = predict(model, data)?;
    let preds: Vec<usize> = (0..logits.rows()).map(|i| metrics::argmax(logits.row(i))).collect();
    Ok(metrics::macro_f1(&preds, &data.labels(), model.classes()))
}

/// Fits `model` on `train`, keeping the parameters of the epoch with the best
/// validation macro-F1 (strict improvement). One generator seeded from `seed`
/// drives batch order, augmentation and dropout, in that order per batch.
pub fn train<M: Classifier + ?Sized>(
    model: &mut M,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    bank: Option<&AugmentBank>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split(train, "train", model.classes())?;
    check_split(val, "validation", model.classes())?;
    let bank = bank.filter(|b| cfg.augment && !b.is_empty());

    let start = Instant::now();
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg.lr, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params = model.params().clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<Tensor> = batch
                .iter()
                .map(|&i| {
                    let x = &train.samples[i].x;
                    match bank {
                        Some(bank) => bank.apply(x, &mut rng),
                        None => x.clone(),
                    }
                })
                .collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.samples[i].label).collect();

            let mut g = Graph::with_params(model.params());
            let logits = model.forward_batch(&mut g, &refs, Some(&mut rng))?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {value} at epoch {epoch}, batch {b}")));
            }
            g.backward(loss)?;
            adam.step(model.params_mut(), &g.param_grads())?;
            loss_sum += value * batch.len() as f64;
        }

        let val_f1 = validation_f1(model, val)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_f1,
            lr: cfg.lr,
            elapsed_ms: start.elapsed().as_millis(),
        });
        log::debug!("epoch {epoch}: loss {:.6} val_f1 {val_f1:.4}", loss_sum / train.len() as f64);

        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_params = model.params().clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    model.params_mut().copy_from(&best_params)?;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_f1: best_f1,
    })
}

/// Runs `run` once per seed (concurrently) and aggregates the metrics.
pub fn run_seeds<F>(seeds: &[u64], run: F) -> Result<MetricsReport>
where
    F: Fn(u64) -> Result<Metrics> + Sync,
{
    let per_seed = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    aggregate(seeds, &per_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;
    use crate::model::LinearProbe;

    fn toy(n: usize, offset: u64) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let v = sign * (1.0 + 0.1 * (i as f64));
                LabeledSample {
                    x: Tensor::from_rows(&[vec![v, 0.5], vec![-v, 0.25]]),
                    label,
                    subject: offset + i as u64,
                }
            })
            .collect();
        Dataset::new(2, 2, 2, samples).unwrap()
    }

    #[test]
    fn zero_rate_with_unit_patience_stops_after_two_epochs() {
        let mut probe = LinearProbe::new(2, 2, 2, 0);
        let before = probe.store.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            patience: 1,
            ..TrainConfig::default()
        };
        let out = train(&mut probe, &toy(8, 0), &toy(4, 100), &cfg, 42, None).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(probe.store.tensors(), before.tensors());
    }

    #[test]
    fn probe_learns_a_sign_task() {
        let mut probe = LinearProbe::new(2, 2, 2, 1);
        let cfg = TrainConfig {
            lr: 0.05,
            batch_size: 4,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let out = train(&mut probe, &toy(16, 0), &toy(6, 100), &cfg, 42, None).unwrap();
        assert_eq!(out.best_val_f1, 1.0);
        assert_eq!(evaluate(&probe, &toy(6, 200)).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_and_mismatched_splits_rejected() {
        let mut probe = LinearProbe::new(2, 2, 2, 0);
        let empty = Dataset::new(2, 2, 2, vec![]).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&mut probe, &empty, &toy(2, 0), &cfg, 0, None), Err(Error::Data(_))));
        assert!(matches!(train(&mut probe, &toy(2, 0), &empty, &cfg, 0, None), Err(Error::Data(_))));
        assert!(evaluate(&probe, &empty).is_err());
    }

    #[test]
    fn divergent_rate_reports_non_finite_loss() {
        let mut probe = LinearProbe::new(2, 2, 2, 0);
        let cfg = TrainConfig {
            lr: f64::MAX,
            ..TrainConfig::default()
        };
        let err = train(&mut probe, &toy(8, 0), &toy(4, 100), &cfg, 0, None).unwrap_err();
        assert_eq!(err.kind(), "numeric");
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { seeds: vec![], ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: -1.0, ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn csv_log_layout() {
        let csv = log_csv(&[EpochLog {
            epoch: 1,
            train_loss: 0.5,
            val_f1: 1.0,
            lr: 1e-4,
            elapsed_ms: 3,
        }]);
        assert_eq!(csv, "epoch,train_loss,val_f1,lr,elapsed_ms\n1,0.5,1,0.0001,3\n");
    }
}
