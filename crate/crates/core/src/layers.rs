//! Token mixers over a token matrix `O[S×D]`: single-head scaled
//! dot-product attention and CoTAR (core token aggregation-redistribution).
//!
//! CoTAR replaces the `S×S` interaction of attention with a `D_c`-wide core
//! token: every token votes into the core through a per-dimension softmax
//! over the token axis, then the core is concatenated back onto each token
//! and fused by a second MLP. Nothing of size `S×S` is ever built.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};

/// Dense affine map `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_weight(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_bias(format!("{name}.bias"), fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let xw = g.matmul(x, w)?;
        let b = g.param(self.bias);
        g.add_bias(xw, b)
    }
}

fn check_tokens(g: &Graph, o: Var, dim: usize, op: &'static str) -> Result<usize> {
    let shape = g.shape(o);
    if shape.len() != 2 || shape[1] != dim || shape[0] == 0 {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![0, dim],
        });
    }
    Ok(shape[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Attention,
    Cotar,
    None,
}

impl std::str::FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" => Ok(Self::Attention),
            "cotar" => Ok(Self::Cotar),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown mixer '{other}'"))),
        }
    }
}

impl std::fmt::Display for MixerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Attention => "attention",
            Self::Cotar => "cotar",
            Self::None => "none",
        })
    }
}

/// `Softmax(QKᵀ/√D)·V` with `Q, K, V` affine in `O`.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl AttentionLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            dim,
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, o: Var) -> Result<Var> {
        self.forward_with_weights(g, o).map(|(out, _)| out)
    }

    /// Output together with the `S×S` row-stochastic weight matrix.
    pub fn forward_with_weights(&self, g: &mut Graph, o: Var) -> Result<(Var, Var)> {
        check_tokens(g, o, self.dim, "attention")?;
        let q = self.query.forward(g, o)?;
        let k = self.key.forward(g, o)?;
        let v = self.value.forward(g, o)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scaled = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let weights = g.softmax(scaled, 1)?;
        let out = g.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Forward multiply-accumulates for `s` tokens, as counted by the graph.
    pub fn macs(&self, s: usize) -> u64 {
        attention_macs(s, self.dim)
    }
}

pub fn attention_macs(s: usize, d: usize) -> u64 {
    let (s, d) = (s as u64, d as u64);
    3 * s * d * d + 2 * s * s * d + s * s
}

pub fn cotar_macs(s: usize, d: usize, dc: usize) -> u64 {
    let (s, d, dc) = (s as u64, d as u64, dc as u64);
    s * d * d + s * d * dc + s * dc + s * (d + dc) * d + s * d * d
}

#[derive(Clone, Debug)]
pub struct CotarLayer {
    pub dim: usize,
    pub core_dim: usize,
    pub lin1: Linear,
    pub lin2: Linear,
    pub lin3: Linear,
    pub lin4: Linear,
}

impl CotarLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        core_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if core_dim == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "cotar needs positive dims, got D={dim}, D_c={core_dim}"
            )));
        }
        Ok(Self {
            dim,
            core_dim,
            lin1: Linear::new(store, &format!("{name}.lin1"), dim, dim, rng),
            lin2: Linear::new(store, &format!("{name}.lin2"), dim, core_dim, rng),
            lin3: Linear::new(store, &format!("{name}.lin3"), dim + core_dim, dim, rng),
            lin4: Linear::new(store, &format!("{name}.lin4"), dim, dim, rng),
        })
    }

    /// Default core width, a quarter of the model width (at least 1).
    pub fn default_core_dim(dim: usize) -> usize {
        (dim / 4).max(1)
    }

    /// Per-token core scores `Õ[S×D_c]` and their token-axis softmax `O_w`.
    fn scores(&self, g: &mut Graph, o: Var) -> Result<(Var, Var)> {
        check_tokens(g, o, self.dim, "cotar")?;
        let h = self.lin1.forward(g, o)?;
        let h = g.gelu(h);
        let scores = self.lin2.forward(g, h)?;
        let weights = g.softmax(scores, 0)?;
        Ok((scores, weights))
    }

    /// Core token `C̃_o[D_c]`: softmax-weighted sum of core scores over tokens.
    pub fn core_token(&self, g: &mut Graph, o: Var) -> Result<Var> {
        let (scores, weights) = self.scores(g, o)?;
        let weighted = g.mul(scores, weights)?;
        g.sum(weighted, 0)
    }

    pub fn forward(&self, g: &mut Graph, o: Var) -> Result<Var> {
        let s = check_tokens(g, o, self.dim, "cotar")?;
        let core = self.core_token(g, o)?;
        let spread = g.repeat_rows(core, s)?;
        let joined = g.concat(o, spread, 1)?;
        let h = self.lin3.forward(g, joined)?;
        let h = g.gelu(h);
        self.lin4.forward(g, h)
    }

    pub fn macs(&self, s: usize) -> u64 {
        cotar_macs(s, self.dim, self.core_dim)
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    Attention(AttentionLayer),
    Cotar(CotarLayer),
    Identity,
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(
        kind: MixerKind,
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        core_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            MixerKind::Attention => Self::Attention(AttentionLayer::new(store, name, dim, rng)),
            MixerKind::Cotar => Self::Cotar(CotarLayer::new(store, name, dim, core_dim, rng)?),
            MixerKind::None => Self::Identity,
        })
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Self::Attention(_) => MixerKind::Attention,
            Self::Cotar(_) => MixerKind::Cotar,
            Self::Identity => MixerKind::None,
        }
    }

    pub fn forward(&self, g: &mut Graph, o: Var) -> Result<Var> {
        match self {
            Self::Attention(l) => l.forward(g, o),
            Self::Cotar(l) => l.forward(g, o),
            Self::Identity => Ok(o),
        }
    }
}

/// Dispatches on `kind`, rejecting a layer built for a different mixer.
pub fn mix(kind: MixerKind, mixer: &Mixer, g: &mut Graph, o: Var) -> Result<Var> {
    if mixer.kind() != kind {
        return Err(Error::Config(format!(
            "mixer kind {kind} does not match layer of kind {}",
            mixer.kind()
        )));
    }
    mixer.forward(g, o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tokens(s: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[s, d], 1.0, &mut rng)
    }

    #[test]
    fn single_token_attention_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "attn", 4, &mut rng);
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(1, 4, 2));
        let (out, w) = layer.forward_with_weights(&mut g, o).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        let v = layer.value.forward(&mut g, o).unwrap();
        assert!(g.value(out).max_abs_diff(g.value(v)) < 1e-15);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let attn = AttentionLayer::new(&mut store, "attn", 4, &mut rng);
        let cotar = CotarLayer::new(&mut store, "cotar", 4, 1, &mut rng).unwrap();
        let row = tokens(1, 4, 4).into_data();
        let o = Tensor::new(vec![3, 4], row.repeat(3)).unwrap();
        let mut g = Graph::with_params(&store);
        let o = g.constant(o);
        for out in [attn.forward(&mut g, o).unwrap(), cotar.forward(&mut g, o).unwrap()] {
            let t = g.value(out);
            for r in 1..3 {
                assert_eq!(t.row(r), t.row(0));
            }
        }
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "attn", 6, &mut rng);
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(7, 6, 6));
        let (_, w) = layer.forward_with_weights(&mut g, o).unwrap();
        let w = g.value(w);
        for r in 0..7 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_core_equals_score_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let layer = CotarLayer::new(&mut store, "cotar", 8, 2, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(1, 8, 8));
        let (scores, weights) = layer.scores(&mut g, o).unwrap();
        assert_eq!(g.value(weights).data(), &[1.0, 1.0]);
        let core = layer.core_token(&mut g, o).unwrap();
        assert_eq!(g.value(core).data(), g.value(scores).data());
    }

    #[test]
    fn core_token_is_columnwise_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let layer = CotarLayer::new(&mut store, "cotar", 8, 3, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(10, 8, 10));
        let (scores, weights) = layer.scores(&mut g, o).unwrap();
        let core = layer.core_token(&mut g, o).unwrap();
        let (scores, weights, core) = (g.value(scores), g.value(weights), g.value(core));
        for j in 0..3 {
            let col: Vec<f64> = (0..10).map(|i| scores.at(i, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(core.data()[j] >= lo - 1e-15 && core.data()[j] <= hi + 1e-15);
            let wsum: f64 = (0..10).map(|i| weights.at(i, j)).sum();
            assert!((wsum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_dispatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let attn = Mixer::new(MixerKind::Attention, &mut store, "a", 4, 1, &mut rng).unwrap();
        let cotar = Mixer::new(MixerKind::Cotar, &mut store, "c", 4, 1, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(3, 4, 12));

        assert_eq!(mix(MixerKind::None, &Mixer::Identity, &mut g, o).unwrap(), o);

        let via = mix(MixerKind::Cotar, &cotar, &mut g, o).unwrap();
        let Mixer::Cotar(c) = &cotar else { unreachable!() };
        let direct = c.forward(&mut g, o).unwrap();
        assert_eq!(g.value(via), g.value(direct));

        let via = mix(MixerKind::Attention, &attn, &mut g, o).unwrap();
        let Mixer::Attention(a) = &attn else { unreachable!() };
        let direct = a.forward(&mut g, o).unwrap();
        assert_eq!(g.value(via), g.value(direct));

        assert!(mix(MixerKind::Attention, &cotar, &mut g, o).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let layer = CotarLayer::new(&mut store, "cotar", 8, 2, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let o = g.constant(tokens(3, 6, 1));
        assert!(matches!(layer.forward(&mut g, o), Err(Error::Shape { .. })));
        assert!(CotarLayer::new(&mut store, "bad", 8, 0, &mut rng).is_err());
    }

    #[test]
    fn graph_mac_counter_matches_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let attn = AttentionLayer::new(&mut store, "a", 8, &mut rng);
        let cotar = CotarLayer::new(&mut store, "c", 8, 2, &mut rng).unwrap();
        for s in [1, 5, 16] {
            let mut g = Graph::with_params(&store);
            let o = g.constant(tokens(s, 8, s as u64));
            let before = g.stats().macs;
            attn.forward(&mut g, o).unwrap();
            assert_eq!(g.stats().macs - before, attn.macs(s));
            let before = g.stats().macs;
            cotar.forward(&mut g, o).unwrap();
            assert_eq!(g.stats().macs - before, cotar.macs(s));
        }
    }
}
