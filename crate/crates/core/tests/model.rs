mod common;

use common::*;
use tech_core::data::{Dataset, LabeledSample};
use tech_core::layers::MixerKind;
use tech_core::model::{BranchMask, Classifier, LinearProbe, TeChConfig, TeChModel};
use tech_core::train::evaluate;
use tech_core::{Graph, Tensor};

fn config(m: usize, n: usize, mixer: MixerKind) -> TeChConfig {
    TeChConfig {
        patch_len: 3,
        temporal_depth: m,
        channel_depth: n,
        core_dim: 2,
        mixer,
        ..TeChConfig::new(8, 3, 2, 8)
    }
}

fn sample(seed: u64) -> Tensor {
    to_tensor(&random_mat(8, 3, &mut rng(seed)))
}

fn masked_logits(model: &TeChModel, x: &Tensor, mask: BranchMask) -> Vec<f64> {
    let mut g = Graph::with_params(&model.store);
    let out = model.forward_masked(&mut g, x, None, mask).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn single_branch_models_equal_masked_dual_model() {
    for mixer in [MixerKind::Cotar, MixerKind::Attention] {
        let dual = TeChModel::new(config(1, 1, mixer), 1).unwrap();
        let mut temporal_only = TeChModel::new(config(1, 0, mixer), 2).unwrap();
        let mut channel_only = TeChModel::new(config(0, 1, mixer), 3).unwrap();
        assert_eq!(temporal_only.store.copy_matching(&dual.store).unwrap(), temporal_only.store.len());
        assert_eq!(channel_only.store.copy_matching(&dual.store).unwrap(), channel_only.store.len());
        for seed in 0..4 {
            let x = sample(seed);
            let t_mask = BranchMask { temporal: true, channel: false };
            let c_mask = BranchMask { temporal: false, channel: true };
            assert_eq!(temporal_only.logits(&x).unwrap().data(), masked_logits(&dual, &x, t_mask).as_slice());
            assert_eq!(channel_only.logits(&x).unwrap().data(), masked_logits(&dual, &x, c_mask).as_slice());
        }
    }
}

#[test]
fn removed_branch_parameters_are_inert() {
    let mut model = TeChModel::new(config(0, 1, MixerKind::Cotar), 4).unwrap();
    let x = sample(5);
    let before = model.logits(&x).unwrap();
    // Only channel and head parameters exist; perturbing a fresh dual model's
    // temporal weights cannot reach this model at all.
    assert!(model.store.names().iter().all(|n| n.starts_with("channel.") || n.starts_with("head")));
    randomize(&mut TeChModel::new(config(1, 1, MixerKind::Cotar), 4).unwrap().store, 6);
    assert_eq!(model.logits(&x).unwrap(), before);
    randomize(&mut model.store, 7);
    assert_ne!(model.logits(&x).unwrap(), before);
}

#[test]
fn sum_fusion_of_branches() {
    // With a linear head, dual logits = temporal-only + channel-only − bias.
    let mut model = TeChModel::new(config(1, 1, MixerKind::Cotar), 8).unwrap();
    randomize(&mut model.store, 9);
    let x = sample(10);
    let both = masked_logits(&model, &x, BranchMask::default());
    let t = masked_logits(&model, &x, BranchMask { temporal: true, channel: false });
    let c = masked_logits(&model, &x, BranchMask { temporal: false, channel: true });
    let none = masked_logits(&model, &x, BranchMask { temporal: false, channel: false });
    let bias = model.store.get(model.head.bias).data().to_vec();
    assert_eq!(none, bias);
    for k in 0..2 {
        assert!((both[k] - (t[k] + c[k] - bias[k])).abs() < 1e-12);
    }
}

#[test]
fn batch_equals_loop_for_duplicates_and_singletons() {
    let model = TeChModel::new(config(1, 1, MixerKind::Cotar), 11).unwrap();
    let xs: Vec<Tensor> = (0..4).map(|s| sample(20 + s)).collect();
    let mut batch = vec![&xs[0], &xs[1], &xs[2], &xs[3], &xs[1]];
    let logits = model.predict_logits(&batch).unwrap();
    for (i, x) in batch.iter().enumerate() {
        let single = model.logits(x).unwrap();
        for k in 0..2 {
            assert!((logits.at(i, k) - single.data()[k]).abs() < 1e-12);
        }
    }
    assert_eq!(logits.row(1), logits.row(4));
    batch.truncate(1);
    assert_eq!(model.predict_logits(&batch).unwrap().row(0), model.logits(&xs[0]).unwrap().data());
}

#[test]
fn ragged_batch_and_wrong_shape_rejected() {
    let model = TeChModel::new(config(1, 1, MixerKind::Cotar), 12).unwrap();
    let good = sample(1);
    let bad = Tensor::zeros(&[7, 3]);
    assert_eq!(model.predict_logits(&[&good, &bad]).unwrap_err().kind(), "shape");
    assert!(model.logits(&bad).is_err());
}

#[test]
fn evaluation_is_deterministic_but_dropout_is_not_identity() {
    let model = TeChModel::new(config(1, 1, MixerKind::Cotar), 13).unwrap();
    let x = sample(14);
    assert_eq!(model.logits(&x).unwrap(), model.logits(&x).unwrap());
    let mut r = rng(15);
    let mut g = Graph::with_params(&model.store);
    let out = model.forward(&mut g, &x, Some(&mut r)).unwrap();
    assert_ne!(g.value(out), &model.logits(&x).unwrap());
}

#[test]
fn parameter_count_formula_matches_for_many_configs() {
    for (m, n) in [(1, 0), (0, 1), (2, 3)] {
        for mixer in [MixerKind::Cotar, MixerKind::Attention, MixerKind::None] {
            for (t, l) in [(8, 3), (10, 5), (9, 9)] {
                let cfg = TeChConfig {
                    len: t,
                    patch_len: l,
                    ..config(m, n, mixer)
                };
                let model = TeChModel::new(cfg.clone(), 0).unwrap();
                assert_eq!(model.store.count(), cfg.param_count(), "{cfg:?}");
            }
        }
    }
}

#[test]
fn zero_head_model_scores_chance_on_balanced_data() {
    let mut model = TeChModel::new(config(1, 1, MixerKind::Cotar), 16).unwrap();
    let head_w = model.head.weight;
    model.store.get_mut(head_w).data_mut().fill(0.0);
    let samples = (0..20)
        .map(|i| LabeledSample {
            x: sample(100 + i),
            label: (i % 2) as usize,
            subject: i,
        })
        .collect();
    let data = Dataset::new(8, 3, 2, samples).unwrap();
    let m = evaluate(&model, &data).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.auroc_macro, 0.5);
}

#[test]
fn probe_is_affine_and_bias_at_zero() {
    let mut probe = LinearProbe::new(8, 3, 2, 17);
    randomize(&mut probe.store, 18);
    let zero = Tensor::zeros(&[8, 3]);
    let bias = probe.store.get(probe.head.bias).data().to_vec();
    assert_eq!(probe.predict_logits(&[&zero]).unwrap().row(0), bias.as_slice());
    let (a, b) = (sample(19), sample(20));
    let sum = Tensor::new(vec![8, 3], a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();
    let l = probe.predict_logits(&[&a, &b, &sum]).unwrap();
    for k in 0..2 {
        assert!((l.at(2, k) - (l.at(0, k) + l.at(1, k) - bias[k])).abs() < 1e-12);
    }
}
