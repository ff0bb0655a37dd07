//! Training-time augmentation bank for `T×C` samples.
//!
//! [`AugmentBank::apply`] draws one enabled augmentation uniformly at random
//! and applies it with its own probability or ratio. Evaluation paths never
//! see augmented data: only the trainer's minibatch loop calls into here.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    TemporalFlip { prob: f64 },
    ChannelShuffle { prob: f64 },
    TemporalMask { ratio: f64 },
    FrequencyMask { ratio: f64 },
    Jitter { scale: f64 },
    Dropout { ratio: f64 },
}

impl Augmentation {
    /// The full bank with its default strengths.
    pub fn defaults() -> Vec<Augmentation> {
        vec![
            Self::TemporalFlip { prob: 0.5 },
            Self::ChannelShuffle { prob: 0.5 },
            Self::TemporalMask { ratio: 0.1 },
            Self::FrequencyMask { ratio: 0.1 },
            Self::Jitter { scale: 0.1 },
            Self::Dropout { ratio: 0.1 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v, unit) = match *self {
            Self::TemporalFlip { prob } => ("temporal_flip.prob", prob, true),
            Self::ChannelShuffle { prob } => ("channel_shuffle.prob", prob, true),
            Self::TemporalMask { ratio } => ("temporal_mask.ratio", ratio, true),
            Self::FrequencyMask { ratio } => ("frequency_mask.ratio", ratio, true),
            Self::Dropout { ratio } => ("dropout.ratio", ratio, true),
            Self::Jitter { scale } => ("jitter.scale", scale, false),
        };
        let ok = v.is_finite() && v >= 0.0 && (!unit || v <= 1.0);
        if !ok {
            return Err(Error::Config(format!("{name} out of range: {v}")));
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Tensor {
        match *self {
            Self::TemporalFlip { prob } => {
                if rng.gen::<f64>() < prob {
                    temporal_flip(x)
                } else {
                    x.clone()
                }
            }
            Self::ChannelShuffle { prob } => {
                if rng.gen::<f64>() < prob {
                    channel_shuffle(x, rng)
                } else {
                    x.clone()
                }
            }
            Self::TemporalMask { ratio } => temporal_mask(x, ratio, rng),
            Self::FrequencyMask { ratio } => frequency_mask(x, ratio, rng),
            Self::Jitter { scale } => jitter(x, scale, rng),
            Self::Dropout { ratio } => value_dropout(x, ratio, rng),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentBank {
    pub enabled: Vec<Augmentation>,
}

impl AugmentBank {
    pub fn new(enabled: Vec<Augmentation>) -> Result<Self> {
        for a in &enabled {
            a.validate()?;
        }
        Ok(Self { enabled })
    }

    pub fn full() -> Self {
        Self {
            enabled: Augmentation::defaults(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.enabled.is_empty()
    }

    /// Index of the augmentation drawn for one sample, `None` for an empty bank.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        (!self.enabled.is_empty()).then(|| rng.gen_range(0..self.enabled.len()))
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Tensor {
        match self.pick(rng) {
            Some(i) => self.enabled[i].apply(x, rng),
            None => x.clone(),
        }
    }
}

pub fn temporal_flip(x: &Tensor) -> Tensor {
    let t = x.rows();
    let rows: Vec<usize> = (0..t).rev().collect();
    x.permute_rows(&rows)
}

pub fn channel_shuffle<R: Rng + ?Sized>(x: &Tensor, rng: &mut R) -> Tensor {
    let c = x.cols();
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(rng);
    let mut out = x.clone();
    for (row_out, row_in) in out.data_mut().chunks_mut(c).zip(x.data().chunks(c)) {
        for (j, &p) in perm.iter().enumerate() {
            row_out[j] = row_in[p];
        }
    }
    out
}

/// Zeroes `floor(ratio·T)` distinct timestamps across all channels.
pub fn temporal_mask<R: Rng + ?Sized>(x: &Tensor, ratio: f64, rng: &mut R) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let count = (ratio * t as f64).floor() as usize;
    let mut out = x.clone();
    for r in rand::seq::index::sample(rng, t, count.min(t)) {
        out.data_mut()[r * c..(r + 1) * c].fill(0.0);
    }
    out
}

/// Adds `scale · U(0, 1)` noise to every entry.
pub fn jitter<R: Rng + ?Sized>(x: &Tensor, scale: f64, rng: &mut R) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v += scale * rng.gen::<f64>());
    out
}

/// Zeroes each entry independently with probability `ratio`.
pub fn value_dropout<R: Rng + ?Sized>(x: &Tensor, ratio: f64, rng: &mut R) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if rng.gen::<f64>() < ratio {
            *v = 0.0;
        }
    });
    out
}

/// Real DFT bins `0..=n/2` of `signal`, as (re, im) pairs.
pub fn rdft(signal: &[f64]) -> Vec<(f64, f64)> {
    let n = signal.len();
    (0..=n / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &x) in signal.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            (re, im)
        })
        .collect()
}

/// Inverse of [`rdft`] for a real signal of length `n`.
pub fn irdft(bins: &[(f64, f64)], n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, &(re, im)) in bins.iter().enumerate() {
                // Bins strictly between DC and Nyquist stand for a conjugate pair.
                let weight = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
                let angle = 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                acc += weight * (re * angle.cos() - im * angle.sin());
            }
            acc / n as f64
        })
        .collect()
}

/// Per channel: zero `floor(ratio·(T/2+1))` random DFT bins and transform back.
pub fn frequency_mask<R: Rng + ?Sized>(x: &Tensor, ratio: f64, rng: &mut R) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let nbins = t / 2 + 1;
    let count = ((ratio * nbins as f64).floor() as usize).min(nbins);
    let mut out = x.clone();
    for j in 0..c {
        let series: Vec<f64> = (0..t).map(|i| x.at(i, j)).collect();
        let mut bins = rdft(&series);
        for k in rand::seq::index::sample(rng, nbins, count) {
            bins[k] = (0.0, 0.0);
        }
        for (i, v) in irdft(&bins, t).into_iter().enumerate() {
            out.data_mut()[i * c + j] = v;
        }
    }
    out
}

/// Zeroes the listed bins of every channel (deterministic variant used in tests).
pub fn mask_bins(x: &Tensor, bins_to_zero: &[usize]) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    for j in 0..c {
        let series: Vec<f64> = (0..t).map(|i| x.at(i, j)).collect();
        let mut bins = rdft(&series);
        for &k in bins_to_zero {
            bins[k] = (0.0, 0.0);
        }
        for (i, v) in irdft(&bins, t).into_iter().enumerate() {
            out.data_mut()[i * c + j] = v;
        }
    }
    out
}
