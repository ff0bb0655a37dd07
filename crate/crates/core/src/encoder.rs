//! Transformer encoder blocks with a swappable token mixer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var, LAYER_NORM_EPS};
use crate::layers::{Linear, Mixer, MixerKind};
use crate::param::{ParamId, ParamStore};
use crate::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub core_dim: usize,
    pub ffn_hidden: usize,
    pub mixer: MixerKind,
    pub dropout: f64,
    pub pre_norm: bool,
}

impl EncoderConfig {
    /// Post-norm CoTAR block with `D_c = D/4`, `H = 2D` and dropout 0.1.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            core_dim: crate::layers::CotarLayer::default_core_dim(dim),
            ffn_hidden: 2 * dim,
            mixer: MixerKind::Cotar,
            dropout: 0.1,
            pre_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        if self.dim == 0 || self.ffn_hidden == 0 || self.core_dim == 0 {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_const(format!("{name}.gain"), dim, 1.0),
            shift: store.add_bias(format!("{name}.shift"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        g.layer_norm(x, gain, shift, LAYER_NORM_EPS)
    }
}

/// Inverted dropout; identity when `rng` is `None` (evaluation).
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut SeedRng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.mask(x, mask)
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub mixer: Mixer,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm1: Norm,
    pub norm2: Norm,
    pub dropout: f64,
    pub pre_norm: bool,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mixer: Mixer::new(cfg.mixer, store, &format!("{name}.mixer"), cfg.dim, cfg.core_dim, rng)?,
            ffn_in: Linear::new(store, &format!("{name}.ffn1"), cfg.dim, cfg.ffn_hidden, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn2"), cfg.ffn_hidden, cfg.dim, rng),
            norm1: Norm::new(store, &format!("{name}.norm1"), cfg.dim),
            norm2: Norm::new(store, &format!("{name}.norm2"), cfg.dim),
            dropout: cfg.dropout,
            pre_norm: cfg.pre_norm,
        })
    }

    fn ffn(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.ffn_in.forward(g, x)?;
        let h = g.gelu(h);
        self.ffn_out.forward(g, h)
    }

    /// Post-norm: `y = norm1(O + drop(mix(O)))`, `out = norm2(y + drop(ffn(y)))`.
    pub fn forward(&self, g: &mut Graph, o: Var, mut rng: Option<&mut SeedRng>) -> Result<Var> {
        if self.pre_norm {
            let n = self.norm1.forward(g, o)?;
            let m = self.mixer.forward(g, n)?;
            let m = dropout(g, m, self.dropout, rng.as_deref_mut())?;
            let y = g.add(o, m)?;
            let n = self.norm2.forward(g, y)?;
            let f = self.ffn(g, n)?;
            let f = dropout(g, f, self.dropout, rng)?;
            return g.add(y, f);
        }
        let m = self.mixer.forward(g, o)?;
        let m = dropout(g, m, self.dropout, rng.as_deref_mut())?;
        let y = g.add(o, m)?;
        let y = self.norm1.forward(g, y)?;
        let f = self.ffn(g, y)?;
        let f = dropout(g, f, self.dropout, rng)?;
        let z = g.add(y, f)?;
        self.norm2.forward(g, z)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(&self, g: &mut Graph, o: Var, mut rng: Option<&mut SeedRng>) -> Result<Var> {
        self.blocks
            .iter()
            .try_fold(o, |x, b| b.forward(g, x, rng.as_deref_mut()))
    }
}
