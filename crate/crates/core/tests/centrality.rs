mod common;

use std::sync::Mutex;

use common::*;
use tech_core::centrality::{
    analyze_dataset, dic, noise_sweep, perturb_splits, sci, sweep_csv, DEFAULT_BETAS,
};
use tech_core::data::{generate, split_by_subject, GeneratorMode, GeneratorSpec, SplitSpec, Splits};
use tech_core::layers::MixerKind;
use tech_core::Tensor;

fn splits() -> Splits {
    let spec = GeneratorSpec {
        subjects: 6,
        trials_per_subject: 2,
        len: 16,
        channels: 3,
        ..GeneratorSpec::centralized_two_class(4)
    };
    split_by_subject(&generate(&spec).unwrap(), &SplitSpec::standard(0)).unwrap()
}

#[test]
fn sweep_shares_noise_across_mixers_and_leaves_beta_zero_clean() {
    let clean = splits();
    let seen: Mutex<Vec<(MixerKind, Splits)>> = Mutex::new(Vec::new());
    let points = noise_sweep(&clean, &[0.0, 5.0], &[MixerKind::Cotar, MixerKind::Attention], 11, |mixer, s| {
        seen.lock().unwrap().push((mixer, s.clone()));
        Ok(0.5)
    })
    .unwrap();
    assert_eq!(points.len(), 4);
    let seen = seen.into_inner().unwrap();
    let at = |beta: f64, mixer: MixerKind| {
        let noisy = perturb_splits(&clean, beta, 11);
        seen.iter().find(|(m, s)| *m == mixer && *s == noisy).is_some()
    };
    for mixer in [MixerKind::Cotar, MixerKind::Attention] {
        assert!(at(0.0, mixer) && at(5.0, mixer));
    }
    assert_eq!(perturb_splits(&clean, 0.0, 11), clean);
    // Only the last channel moves.
    let noisy = perturb_splits(&clean, 5.0, 11);
    for (a, b) in noisy.train.samples.iter().zip(&clean.train.samples) {
        for t in 0..16 {
            assert_eq!(a.x.row(t)[..2], b.x.row(t)[..2]);
        }
        assert_ne!(a.x, b.x);
    }
    assert!(sweep_csv(&points).starts_with("beta,mixer,f1\n0,cotar,0.5\n"));
}

#[test]
fn sweep_rejects_bad_grids() {
    let s = splits();
    let f = |_: MixerKind, _: &Splits| Ok(1.0);
    assert!(noise_sweep(&s, &[], &[MixerKind::Cotar], 0, f).is_err());
    assert!(noise_sweep(&s, &[1.0, 2.0], &[MixerKind::Cotar], 0, f).is_err());
    assert!(noise_sweep(&s, &[0.0, 2.0, 1.0], &[MixerKind::Cotar], 0, f).is_err());
    assert_eq!(DEFAULT_BETAS.first(), Some(&0.0));
    assert_eq!(DEFAULT_BETAS.last(), Some(&20.0));
}

#[test]
fn centralized_draws_exceed_decentralized_draws() {
    let mean = |mode: GeneratorMode| {
        let mut acc = (0.0, 0.0);
        for seed in 0..4 {
            let spec = GeneratorSpec {
                mode,
                subjects: 2,
                trials_per_subject: 2,
                ..GeneratorSpec::centralized_two_class(seed)
            };
            let c = analyze_dataset(&generate(&spec).unwrap()).unwrap();
            acc.0 += c.sci_mean / 4.0;
            acc.1 += c.dic_mean / 4.0;
        }
        acc
    };
    let (cs, cd) = mean(GeneratorMode::Centralized);
    let (ds, dd) = mean(GeneratorMode::Decentralized);
    assert!(cs > ds, "sci {cs} vs {ds}");
    assert!(cd > dd, "dic {cd} vs {dd}");
}

#[test]
fn centralization_measures_are_scale_invariant() {
    let x = to_tensor(&random_mat(4, 60, &mut rng(3)));
    let scaled = Tensor::new(vec![4, 60], x.data().iter().map(|v| -0.01 * v).collect()).unwrap();
    assert!((sci(&x).unwrap() - sci(&scaled).unwrap()).abs() < 1e-12);
    assert!((dic(&x).unwrap().0 - dic(&scaled).unwrap().0).abs() < 1e-6);
}
