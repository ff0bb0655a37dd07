//! The dual-branch classifier and the raw-series linear probe.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderStack};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{CotarLayer, Linear, MixerKind};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::tokenizer::{patch_count, ChannelTokenizer, TemporalTokenizer};
use crate::SeedRng;

/// Anything the trainer can fit: a parameter store plus a batched forward.
pub trait Classifier {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn classes(&self) -> usize;
    /// Logits `[B×K]` for a batch of `T×C` samples. `rng` enables dropout.
    fn forward_batch(&self, g: &mut Graph, xs: &[&Tensor], rng: Option<&mut SeedRng>) -> Result<Var>;

    /// Evaluation-mode logits as plain rows.
    fn predict_logits(&self, xs: &[&Tensor]) -> Result<Tensor> {
        let mut g = Graph::with_params(self.params());
        let out = self.forward_batch(&mut g, xs, None)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeChConfig {
    /// Timestamps per sample (T).
    pub len: usize,
    /// Channels per sample (C).
    pub channels: usize,
    /// Class count (K).
    pub classes: usize,
    /// Model width (D).
    pub dim: usize,
    /// Core token width (D_c).
    pub core_dim: usize,
    /// Temporal patch length (L).
    pub patch_len: usize,
    /// Temporal branch depth (M).
    pub temporal_depth: usize,
    /// Channel branch depth (N).
    pub channel_depth: usize,
    pub mixer: MixerKind,
    pub dropout: f64,
    pub ffn_hidden: usize,
    pub pre_norm: bool,
}

impl TeChConfig {
    /// Dual CoTAR model with one block per branch and the default widths.
    pub fn new(len: usize, channels: usize, classes: usize, dim: usize) -> Self {
        Self {
            len,
            channels,
            classes,
            dim,
            core_dim: CotarLayer::default_core_dim(dim),
            patch_len: len.min(16),
            temporal_depth: 1,
            channel_depth: 1,
            mixer: MixerKind::Cotar,
            dropout: 0.1,
            ffn_hidden: 2 * dim,
            pre_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_depth + self.channel_depth == 0 {
            return Err(Error::Config(
                "temporal_depth + channel_depth must be at least 1; use the linear probe for the no-representation baseline".into(),
            ));
        }
        if self.len == 0 || self.channels == 0 || self.classes < 2 {
            return Err(Error::Config(format!(
                "need T ≥ 1, C ≥ 1, K ≥ 2; got T={}, C={}, K={}",
                self.len, self.channels, self.classes
            )));
        }
        if self.patch_len == 0 || self.patch_len > self.len {
            return Err(Error::Config(format!(
                "patch_len must be in [1, {}], got {}",
                self.len, self.patch_len
            )));
        }
        self.encoder().validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            core_dim: self.core_dim,
            ffn_hidden: self.ffn_hidden,
            mixer: self.mixer,
            dropout: self.dropout,
            pre_norm: self.pre_norm,
        }
    }

    pub fn patches(&self) -> usize {
        patch_count(self.len, self.patch_len)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (d, dc, h) = (self.dim, self.core_dim, self.ffn_hidden);
        let mixer = match self.mixer {
            MixerKind::Cotar => (d * d + d) + (d * dc + dc) + ((d + dc) * d + d) + (d * d + d),
            MixerKind::Attention => 3 * (d * d + d),
            MixerKind::None => 0,
        };
        let block = mixer + (d * h + h) + (h * d + d) + 4 * d;
        let temporal = if self.temporal_depth > 0 {
            self.patch_len * self.channels * d + d + self.patches() * d + self.temporal_depth * block
        } else {
            0
        };
        let channel = if self.channel_depth > 0 {
            self.len * d + d + self.channels * d + self.channel_depth * block
        } else {
            0
        };
        temporal + channel + d * self.classes + self.classes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchMask {
    pub temporal: bool,
    pub channel: bool,
}

impl Default for BranchMask {
    fn default() -> Self {
        Self {
            temporal: true,
            channel: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TeChModel {
    pub config: TeChConfig,
    pub store: ParamStore,
    pub temporal: Option<(TemporalTokenizer, EncoderStack)>,
    pub channel: Option<(ChannelTokenizer, EncoderStack)>,
    pub head: Linear,
}

impl TeChModel {
    pub fn new(config: TeChConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = config.encoder();
        let temporal = if config.temporal_depth > 0 {
            let tk = TemporalTokenizer::new(
                &mut store,
                "temporal.embed",
                config.len,
                config.channels,
                config.patch_len,
                config.dim,
                &mut rng,
            )?;
            let stack = EncoderStack::new(&mut store, "temporal", config.temporal_depth, &enc, &mut rng)?;
            Some((tk, stack))
        } else {
            None
        };
        let channel = if config.channel_depth > 0 {
            let ck = ChannelTokenizer::new(
                &mut store,
                "channel.embed",
                config.len,
                config.channels,
                config.dim,
                &mut rng,
            );
            let stack = EncoderStack::new(&mut store, "channel", config.channel_depth, &enc, &mut rng)?;
            Some((ck, stack))
        } else {
            None
        };
        let head = Linear::new(&mut store, "head", config.dim, config.classes, &mut rng);
        Ok(Self {
            config,
            store,
            temporal,
            channel,
            head,
        })
    }

    /// Logits `[K]` for one `T×C` sample.
    pub fn forward(&self, g: &mut Graph, x: &Tensor, rng: Option<&mut SeedRng>) -> Result<Var> {
        self.forward_masked(g, x, rng, BranchMask::default())
    }

    /// Forward pass with selected branch outputs replaced by zero vectors.
    pub fn forward_masked(
        &self,
        g: &mut Graph,
        x: &Tensor,
        mut rng: Option<&mut SeedRng>,
        mask: BranchMask,
    ) -> Result<Var> {
        let mut pooled: Option<Var> = None;
        if let (Some((tk, stack)), true) = (&self.temporal, mask.temporal) {
            let e = tk.forward(g, x)?;
            let o = stack.forward(g, e, rng.as_deref_mut())?;
            pooled = Some(g.mean(o, 0)?);
        }
        if let (Some((ck, stack)), true) = (&self.channel, mask.channel) {
            let h = ck.forward(g, x)?;
            let o = stack.forward(g, h, rng.as_deref_mut())?;
            let p = g.mean(o, 0)?;
            pooled = Some(match pooled {
                Some(t) => g.add(t, p)?,
                None => p,
            });
        }
        let pooled = match pooled {
            Some(p) => p,
            None => g.constant(Tensor::zeros(&[self.config.dim])),
        };
        let row = g.reshape(pooled, &[1, self.config.dim])?;
        let logits = self.head.forward(g, row)?;
        g.reshape(logits, &[self.config.classes])
    }

    /// Evaluation-mode logits for one sample.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.store);
        let out = self.forward(&mut g, x, None)?;
        Ok(g.value(out).clone())
    }
}

fn stack_rows<F>(g: &mut Graph, xs: &[&Tensor], k: usize, mut row: F) -> Result<Var>
where
    F: FnMut(&mut Graph, &Tensor) -> Result<Var>,
{
    let Some((first, rest)) = xs.split_first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let shape = first.shape().to_vec();
    let mut out = row(g, first)?;
    out = g.reshape(out, &[1, k])?;
    for x in rest {
        if x.shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "forward_batch",
                lhs: shape,
                rhs: x.shape().to_vec(),
            });
        }
        let r = row(g, x)?;
        let r = g.reshape(r, &[1, k])?;
        out = g.concat(out, r, 0)?;
    }
    Ok(out)
}

impl Classifier for TeChModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn forward_batch(&self, g: &mut Graph, xs: &[&Tensor], mut rng: Option<&mut SeedRng>) -> Result<Var> {
        stack_rows(g, xs, self.config.classes, |g, x| self.forward(g, x, rng.as_deref_mut()))
    }
}

/// Flattened raw series mapped to logits by a single affine layer.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub len: usize,
    pub channels: usize,
    pub classes: usize,
    pub store: ParamStore,
    pub head: Linear,
}

impl LinearProbe {
    pub fn new(len: usize, channels: usize, classes: usize, seed: u64) -> Self {
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = Linear::new(&mut store, "probe", len * channels, classes, &mut rng);
        Self {
            len,
            channels,
            classes,
            store,
            head,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        if x.shape() != [self.len, self.channels] {
            return Err(Error::Shape {
                op: "linear_probe",
                lhs: x.shape().to_vec(),
                rhs: vec![self.len, self.channels],
            });
        }
        let flat = g.constant(x.clone().reshaped(&[1, self.len * self.channels])?);
        let logits = self.head.forward(g, flat)?;
        g.reshape(logits, &[self.classes])
    }
}

impl Classifier for LinearProbe {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn forward_batch(&self, g: &mut Graph, xs: &[&Tensor], _rng: Option<&mut SeedRng>) -> Result<Var> {
        stack_rows(g, xs, self.classes, |g, x| self.forward(g, x))
    }
}
