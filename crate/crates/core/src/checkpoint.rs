//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "TECHCKPT"
//! version      u32       1
//! config_len   u64       byte length of the JSON config that follows
//! config       bytes     UTF-8 JSON of the model config
//! n_params     u64
//! n_params × {
//!     name_len u32, name bytes (UTF-8)
//!     rank     u32, rank × u64 dims
//!     data     prod(dims) × f64 (IEEE-754 bits, little-endian)
//! }
//! ```
//!
//! Parameters appear in declaration order, so a load into a freshly built
//! model of the same config is a positional copy. Values are stored as raw
//! bits and round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, LinearProbe, TeChConfig, TeChModel};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TECHCKPT";
pub const VERSION: u32 = 1;

pub fn encode(config_json: &str, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.names().iter().zip(store.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Data(format!("checkpoint truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Data(format!("length {v} out of range")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Data(format!("invalid UTF-8 in checkpoint: {e}")))
    }
}

/// Splits a checkpoint into its config JSON and parameter store.
pub fn decode(bytes: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u64()?;
    let config = r.string(config_len)?;
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Data(format!("parameter {name} is too large")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Data("overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok((config, store))
}

pub fn save_model(path: &Path, model: &TeChModel) -> Result<()> {
    let config = serde_json::to_string(&model.config)?;
    fs::write(path, encode(&config, &model.store)).map_err(Error::file(path))?;
    Ok(())
}

/// Rebuilds the model from the stored config and copies the stored
/// parameters in, checking names and shapes.
pub fn load_model(path: &Path) -> Result<TeChModel> {
    let (config, store) = decode(&fs::read(path).map_err(Error::file(path))?)?;
    let config: TeChConfig = serde_json::from_str(&config)?;
    let mut model = TeChModel::new(config, 0)?;
    install(&mut model.store, &store)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeShape {
    len: usize,
    channels: usize,
    classes: usize,
}

/// Config JSON of a probe checkpoint: `{"linear_probe": {len, channels, classes}}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeConfig {
    linear_probe: ProbeShape,
}

pub fn save_probe(path: &Path, probe: &LinearProbe) -> Result<()> {
    let config = serde_json::to_string(&ProbeConfig {
        linear_probe: ProbeShape {
            len: probe.len,
            channels: probe.channels,
            classes: probe.classes,
        },
    })?;
    fs::write(path, encode(&config, &probe.store)).map_err(Error::file(path))?;
    Ok(())
}

/// Either kind of trained classifier, as read back from disk.
#[derive(Clone, Debug)]
pub enum SavedModel {
    TeCh(TeChModel),
    Probe(LinearProbe),
}

impl SavedModel {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Self::TeCh(m) => m,
            Self::Probe(p) => p,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::TeCh(m) => save_model(path, m),
            Self::Probe(p) => save_probe(path, p),
        }
    }
}

fn install(target: &mut ParamStore, stored: &ParamStore) -> Result<()> {
    if target.names() != stored.names() {
        return Err(Error::Data("checkpoint parameters do not match the stored config".into()));
    }
    target.copy_from(stored)
}

/// Loads a model or probe checkpoint, dispatching on the stored config.
pub fn load_any(path: &Path) -> Result<SavedModel> {
    let (config, store) = decode(&fs::read(path).map_err(Error::file(path))?)?;
    if let Ok(probe) = serde_json::from_str::<ProbeConfig>(&config) {
        let s = probe.linear_probe;
        let mut p = LinearProbe::new(s.len, s.channels, s.classes, 0);
        install(&mut p.store, &store)?;
        return Ok(SavedModel::Probe(p));
    }
    let config: TeChConfig = serde_json::from_str(&config)?;
    let mut model = TeChModel::new(config, 0)?;
    install(&mut model.store, &store)?;
    Ok(SavedModel::TeCh(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TeChModel {
        let cfg = TeChConfig {
            patch_len: 4,
            core_dim: 2,
            ..TeChConfig::new(8, 3, 2, 8)
        };
        TeChModel::new(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in back.store.tensors().iter().zip(m.store.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(fs::read(&path).unwrap(), encode(&serde_json::to_string(&m.config).unwrap(), &back.store));
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(vec![1.5]));
        let bytes = encode("{}", &store);
        assert_eq!(&bytes[..8], b"TECHCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..22], b"{}");
        assert_eq!(bytes.len(), 8 + 4 + 8 + 2 + 8 + 4 + 1 + 4 + 8 + 8);
        assert_eq!(&bytes[bytes.len() - 8..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn probe_round_trip_dispatches() {
        let probe = LinearProbe::new(4, 2, 3, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.ckpt");
        save_probe(&path, &probe).unwrap();
        match load_any(&path).unwrap() {
            SavedModel::Probe(p) => {
                assert_eq!((p.len, p.channels, p.classes), (4, 2, 3));
                assert_eq!(p.store.tensors(), probe.store.tensors());
            }
            SavedModel::TeCh(_) => panic!("loaded a probe checkpoint as a model"),
        }
        let m = model();
        save_model(&path, &m).unwrap();
        assert!(matches!(load_any(&path).unwrap(), SavedModel::TeCh(_)));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = model();
        let bytes = encode(&serde_json::to_string(&m.config).unwrap(), &m.store);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
