//! Central finite-difference verification of graph adjoints.

use serde::Serialize;

use rand::SeedableRng;

use crate::encoder::{EncoderBlock, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{AttentionLayer, CotarLayer, MixerKind};
use crate::model::{Classifier, TeChConfig, TeChModel};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::tokenizer::{ChannelTokenizer, TemporalTokenizer};
use crate::SeedRng;

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_err: f64,
    /// Name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient of `f` against central differences with
/// step `h` for every scalar of every parameter in `store`.
///
/// `f` builds a scalar loss on a graph that already has `store` bound.
pub fn grad_check<F>(store: &ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::with_params(store);
    let loss = f(&mut g)?;
    g.backward(loss)?;
    let analytic = g.param_grads();
    if analytic.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("non-finite analytic gradient".into()));
    }

    let mut probe = store.clone();
    let mut max_rel_err = 0.0;
    let mut worst = None;
    let mut entries = 0;
    for id in store.ids() {
        for j in 0..store.get(id).numel() {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[id.index()].data()[j], numeric);
            entries += 1;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = err;
                worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(GradCheckReport {
        entries,
        max_rel_err,
        worst,
        tol,
        passed: max_rel_err < tol,
    })
}

/// Scalar probe `Σ out ⊙ R` with a fixed random `R`, so no output entry
/// gets a structurally trivial adjoint (a plain sum would, e.g. through
/// softmax rows).
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = SeedRng::seed_from_u64(seed);
    let r = g.constant(Tensor::uniform(g.shape(out), 1.0, &mut rng));
    let prod = g.mul(out, r)?;
    Ok(g.sum_all(prod))
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Every layer type at small sizes, plus the full dual model at
/// `T=8, C=3, K=2, D=8, D_c=2, M=N=1`.
pub fn default_suite(h: f64, tol: f64) -> Result<Vec<SuiteEntry>> {
    let (s, d, dc) = (5, 6, 2);
    let mut rng = SeedRng::seed_from_u64(11);
    let o = Tensor::uniform(&[s, d], 1.0, &mut rng);
    let x = Tensor::uniform(&[8, 3], 1.0, &mut rng);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let cotar = CotarLayer::new(&mut store, "cotar", d, dc, &mut rng)?;
    let report = grad_check(&store, |g| {
        let v = g.constant(o.clone());
        let y = cotar.forward(g, v)?;
        weighted_sum(g, y, 1)
    }, h, tol)?;
    out.push(SuiteEntry { name: "cotar", report });

    let mut store = ParamStore::new();
    let attn = AttentionLayer::new(&mut store, "attention", d, &mut rng);
    let report = grad_check(&store, |g| {
        let v = g.constant(o.clone());
        let y = attn.forward(g, v)?;
        weighted_sum(g, y, 2)
    }, h, tol)?;
    out.push(SuiteEntry { name: "attention", report });

    for (name, mixer, pre_norm) in [
        ("encoder_block_cotar", MixerKind::Cotar, false),
        ("encoder_block_attention", MixerKind::Attention, false),
        ("encoder_block_cotar_pre_norm", MixerKind::Cotar, true),
    ] {
        let cfg = EncoderConfig {
            core_dim: dc,
            mixer,
            pre_norm,
            ..EncoderConfig::new(d)
        };
        let mut store = ParamStore::new();
        let block = EncoderBlock::new(&mut store, "block", &cfg, &mut rng)?;
        let report = grad_check(&store, |g| {
            let v = g.constant(o.clone());
            let y = block.forward(g, v, None)?;
            weighted_sum(g, y, 3)
        }, h, tol)?;
        out.push(SuiteEntry { name, report });
    }

    let mut store = ParamStore::new();
    let temporal = TemporalTokenizer::new(&mut store, "temporal", 8, 3, 3, d, &mut rng)?;
    let report = grad_check(&store, |g| {
        let y = temporal.forward(g, &x)?;
        weighted_sum(g, y, 4)
    }, h, tol)?;
    out.push(SuiteEntry { name: "temporal_tokenizer", report });

    let mut store = ParamStore::new();
    let channel = ChannelTokenizer::new(&mut store, "channel", 8, 3, d, &mut rng);
    let report = grad_check(&store, |g| {
        let y = channel.forward(g, &x)?;
        weighted_sum(g, y, 5)
    }, h, tol)?;
    out.push(SuiteEntry { name: "channel_tokenizer", report });

    let cfg = TeChConfig {
        core_dim: 2,
        patch_len: 3,
        ..TeChConfig::new(8, 3, 2, 8)
    };
    let model = TeChModel::new(cfg, 13)?;
    let x2 = Tensor::uniform(&[8, 3], 1.0, &mut rng);
    let report = grad_check(&model.store, |g| {
        let logits = model.forward_batch(g, &[&x, &x2], None)?;
        g.softmax_cross_entropy(logits, &[0, 1])
    }, h, tol)?;
    out.push(SuiteEntry { name: "tech_dual", report });

    Ok(out)
}
