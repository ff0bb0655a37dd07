//! Flat JSON run configuration shared by every command.
//!
//! Every key is optional in the file (defaults fill the rest), unknown keys
//! are rejected, and `key=value` overrides are applied on top before
//! validation. Override values are parsed as JSON, falling back to a plain
//! string, so `mixer=attention`, `lr=1e-3` and `seeds=[1,2]` all work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::{AugmentBank, Augmentation};
use crate::bench::BenchConfig;
use crate::centrality::DEFAULT_BETAS;
use crate::data::{GeneratorMode, GeneratorSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::layers::{CotarLayer, MixerKind};
use crate::model::TeChConfig;
use crate::train::TrainConfig;

pub const CONFIG_SCHEMA: &str = "tech-config/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Data shape, shared by the generator and the model.
    pub len: usize,
    pub channels: usize,
    pub classes: usize,

    // Model.
    pub dim: usize,
    /// `null` means `max(dim/4, 1)`.
    pub core_dim: Option<usize>,
    /// `null` means `min(len, 16)`.
    pub patch_len: Option<usize>,
    pub temporal_depth: usize,
    pub channel_depth: usize,
    pub mixer: MixerKind,
    pub dropout: f64,
    /// `null` means `2·dim`.
    pub ffn_hidden: Option<usize>,
    pub pre_norm: bool,
    /// Train the raw-series linear probe instead of the model.
    pub linear_probe: bool,

    // Training.
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub augment: bool,

    // Augmentation bank: enabled names and strengths.
    pub augmentations: Vec<String>,
    pub flip_prob: f64,
    pub shuffle_prob: f64,
    pub temporal_mask_ratio: f64,
    pub frequency_mask_ratio: f64,
    pub jitter_scale: f64,
    pub dropout_ratio: f64,

    // Synthetic generator (used when `data` is null).
    pub generator_mode: GeneratorMode,
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub coupling: f64,
    pub noise: f64,
    pub freqs: Vec<f64>,
    pub data_seed: u64,

    // Subject split.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,

    // Paths.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    // Analysis.
    pub sweep: bool,
    pub betas: Vec<f64>,
    pub sweep_mixers: Vec<MixerKind>,
    pub noise_seed: u64,

    // Benchmark.
    pub bench_tokens: Vec<usize>,
    pub bench_dim: usize,
    pub bench_core_dim: Option<usize>,
    pub bench_repeats: usize,

    // Gradient check.
    pub gradcheck_tol: f64,
    pub gradcheck_step: f64,
}

pub const AUGMENTATION_NAMES: [&str; 6] = [
    "temporal_flip",
    "channel_shuffle",
    "temporal_mask",
    "frequency_mask",
    "jitter",
    "dropout",
];

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let bench = BenchConfig::default();
        Self {
            len: 128,
            channels: 8,
            classes: 2,
            dim: 32,
            core_dim: None,
            patch_len: None,
            temporal_depth: 2,
            channel_depth: 2,
            mixer: MixerKind::Cotar,
            dropout: 0.1,
            ffn_hidden: None,
            pre_norm: false,
            linear_probe: false,
            lr: train.lr,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            seeds: train.seeds,
            augment: train.augment,
            augmentations: AUGMENTATION_NAMES.iter().map(|s| s.to_string()).collect(),
            flip_prob: 0.5,
            shuffle_prob: 0.5,
            temporal_mask_ratio: 0.1,
            frequency_mask_ratio: 0.1,
            jitter_scale: 0.1,
            dropout_ratio: 0.1,
            generator_mode: GeneratorMode::Centralized,
            subjects: 60,
            trials_per_subject: 6,
            coupling: 0.9,
            noise: 0.3,
            freqs: vec![0.05, 0.15],
            data_seed: 0,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            split_seed: 0,
            data: None,
            checkpoint: None,
            sweep: false,
            betas: DEFAULT_BETAS.to_vec(),
            sweep_mixers: vec![MixerKind::Cotar, MixerKind::Attention],
            noise_seed: 0,
            bench_tokens: bench.tokens,
            bench_dim: bench.dim,
            bench_core_dim: None,
            bench_repeats: bench.repeats,
            gradcheck_tol: 1e-5,
            gradcheck_step: 1e-5,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, Value)> {
    let Some((key, value)) = raw.split_once('=') else {
        return Err(Error::Config(format!("override '{raw}' is not key=value")));
    };
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    /// Parses a config file. A `schema` key (as written by [`Self::to_json`])
    /// is accepted when it names this schema, so echoed configs re-load.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Value::Object(map) = &mut value {
            match map.remove("schema") {
                None => {}
                Some(Value::String(s)) if s == CONFIG_SCHEMA => {}
                Some(other) => return Err(Error::Config(format!("unsupported config schema {other}"))),
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (if any), applies `overrides`, validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p).map_err(Error::file(p))?)?,
            None => Self::default(),
        };
        let cfg = base.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("config serializes to an object");
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            if !map.contains_key(&key) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
            map.insert(key, value);
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?.validate()?;
        self.train()?.validate()?;
        self.bank()?;
        self.generator().validate()?;
        self.split().validate()?;
        self.bench().validate()?;
        if self.sweep_mixers.is_empty() {
            return Err(Error::Config("sweep_mixers must be non-empty".into()));
        }
        if !(self.gradcheck_tol > 0.0 && self.gradcheck_step > 0.0) {
            return Err(Error::Config("gradcheck_tol and gradcheck_step must be positive".into()));
        }
        Ok(())
    }

    /// Effective config as a flat JSON object tagged with the schema.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("schema".into(), Value::String(CONFIG_SCHEMA.into()));
        if let Value::Object(fields) = serde_json::to_value(self).expect("config serializes") {
            map.extend(fields);
        }
        Value::Object(map)
    }

    pub fn model(&self) -> Result<TeChConfig> {
        let base = TeChConfig::new(self.len, self.channels, self.classes, self.dim);
        let cfg = TeChConfig {
            core_dim: self.core_dim.unwrap_or(base.core_dim),
            patch_len: self.patch_len.unwrap_or(base.patch_len),
            temporal_depth: self.temporal_depth,
            channel_depth: self.channel_depth,
            mixer: self.mixer,
            dropout: self.dropout,
            ffn_hidden: self.ffn_hidden.unwrap_or(base.ffn_hidden),
            pre_norm: self.pre_norm,
            ..base
        };
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seeds: self.seeds.clone(),
            augment: self.augment,
        })
    }

    pub fn bank(&self) -> Result<AugmentBank> {
        let enabled = self
            .augmentations
            .iter()
            .map(|name| match name.as_str() {
                "temporal_flip" => Ok(Augmentation::TemporalFlip { prob: self.flip_prob }),
                "channel_shuffle" => Ok(Augmentation::ChannelShuffle { prob: self.shuffle_prob }),
                "temporal_mask" => Ok(Augmentation::TemporalMask {
                    ratio: self.temporal_mask_ratio,
                }),
                "frequency_mask" => Ok(Augmentation::FrequencyMask {
                    ratio: self.frequency_mask_ratio,
                }),
                "jitter" => Ok(Augmentation::Jitter { scale: self.jitter_scale }),
                "dropout" => Ok(Augmentation::Dropout { ratio: self.dropout_ratio }),
                other => Err(Error::Config(format!("unknown augmentation '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        AugmentBank::new(enabled)
    }

    pub fn generator(&self) -> GeneratorSpec {
        GeneratorSpec {
            mode: self.generator_mode,
            subjects: self.subjects,
            trials_per_subject: self.trials_per_subject,
            len: self.len,
            channels: self.channels,
            classes: self.classes,
            coupling: self.coupling,
            noise: self.noise,
            freqs: self.freqs.clone(),
            seed: self.data_seed,
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
            seed: self.split_seed,
        }
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            tokens: self.bench_tokens.clone(),
            dim: self.bench_dim,
            core_dim: self
                .bench_core_dim
                .unwrap_or_else(|| CotarLayer::default_core_dim(self.bench_dim)),
            repeats: self.bench_repeats,
            ..BenchConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let m = RunConfig::default().model().unwrap();
        assert_eq!((m.core_dim, m.patch_len, m.ffn_hidden), (8, 16, 64));
    }

    #[test]
    fn file_keys_are_optional_and_unknown_keys_rejected() {
        let cfg = RunConfig::from_json(r#"{"dim": 16, "mixer": "attention"}"#).unwrap();
        assert_eq!(cfg.dim, 16);
        assert_eq!(cfg.mixer, MixerKind::Attention);
        assert_eq!(cfg.lr, 1e-4);
        let err = RunConfig::from_json(r#"{"dimm": 16}"#).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn overrides_parse_json_then_strings() {
        let cfg = RunConfig::default()
            .with_overrides(&[
                "lr=0.001".into(),
                "mixer=attention".into(),
                "seeds=[7,8]".into(),
                "data=some/file.medts".into(),
                "core_dim=null".into(),
            ])
            .unwrap();
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.mixer, MixerKind::Attention);
        assert_eq!(cfg.seeds, vec![7, 8]);
        assert_eq!(cfg.data.as_deref(), Some(Path::new("some/file.medts")));
        assert!(RunConfig::default().with_overrides(&["nope=1".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["lr".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["lr=fast".into()]).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        for o in ["patience=0", "temporal_depth=0", "augmentations=[\"warp\"]", "train_fraction=0.9"] {
            let cfg = RunConfig::default().with_overrides(&[o.to_string(), "channel_depth=0".into()]);
            assert!(cfg.and_then(|c| c.validate()).is_err(), "{o}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        let mut json = cfg.to_json();
        assert_eq!(json["schema"], CONFIG_SCHEMA);
        assert_eq!(RunConfig::from_json(&json.to_string()).unwrap(), cfg);
        json["schema"] = Value::String("tech-config/v0".into());
        assert!(RunConfig::from_json(&json.to_string()).is_err());
    }
}
