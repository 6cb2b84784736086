//! `PIPC` checkpoint container: magic, u16 version, u64 header length, JSON
//! header, u32 entry count, a name index of `(u16 name length, name, u64
//! offset, u64 length)` and then the `.pipt` blobs the index points into.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pipnet_core::model::{ModelConfig, ModelParams};
use pipnet_core::rng::RngState;
use pipnet_core::train::{BestSnapshot, EpochMetrics, OptimState, TrainConfig, Trainer};
use pipnet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipt;

pub const MAGIC: &[u8; 4] = b"PIPC";
pub const VERSION: u16 = 1;

const PARAM: &str = "param/";
const OPTIM: &str = "optim/";
const BEST: &str = "best/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMarker {
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u16,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub rng: RngState,
    pub optim_steps: u64,
    pub best: Option<BestMarker>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ModelParams<f32>,
    pub optim: OptimState<f32>,
    pub best: Option<ModelParams<f32>>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            header: Header {
                version: VERSION,
                model: t.model.clone(),
                train: t.train.clone(),
                epoch: t.epoch,
                history: t.history.clone(),
                rng: t.rng_state(),
                optim_steps: t.optim.steps,
                best: t.best.as_ref().map(|b| BestMarker {
                    epoch: b.epoch,
                    val_loss: b.val_loss,
                }),
            },
            params: t.params.clone(),
            optim: t.optim.clone(),
            best: t.best.as_ref().map(|b| b.params.clone()),
        }
    }

    /// Restores a trainer that continues exactly where this one stopped.
    pub fn into_trainer(self, origin: &Path) -> Result<Trainer> {
        let h = self.header;
        let mut t = Trainer::with_params(h.model, h.train, self.params)?;
        t.optim = self.optim;
        t.rng = h.rng.restore().ok_or_else(|| Error::format(origin, "bad rng state"))?;
        t.epoch = h.epoch;
        t.history = h.history;
        t.best = match (h.best, self.best) {
            (Some(m), Some(params)) => Some(BestSnapshot {
                epoch: m.epoch,
                val_loss: m.val_loss,
                params,
            }),
            (None, None) => None,
            _ => return Err(Error::format(origin, "best snapshot marker without tensors")),
        };
        Ok(t)
    }

    /// Parameters to evaluate: the best validation snapshot when present.
    pub fn eval_params(&self) -> &ModelParams<f32> {
        self.best.as_ref().unwrap_or(&self.params)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
        for (k, v) in &self.params.tensors {
            blobs.push((format!("{PARAM}{k}"), pipt::encode(v)));
        }
        for (k, v) in &self.optim.v {
            blobs.push((format!("{OPTIM}{k}"), pipt::encode(v)));
        }
        if let Some(best) = &self.best {
            for (k, v) in &best.tensors {
                blobs.push((format!("{BEST}{k}"), pipt::encode(v)));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, blob) in &blobs {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            offset += blob.len() as u64;
        }
        for (_, blob) in &blobs {
            out.extend_from_slice(blob);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "missing PIPC magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::format(origin, "entry name is not UTF-8"))?
                .to_string();
            index.push((name, r.u64()? as usize, r.u64()? as usize));
        }
        let region = &bytes[r.pos..];
        let mut groups: [BTreeMap<String, Tensor<f32>>; 3] = Default::default();
        for (name, off, len) in index {
            let blob = off
                .checked_add(len)
                .and_then(|end| region.get(off..end))
                .ok_or_else(|| Error::format(origin, format!("entry {name} out of bounds")))?;
            let (t, used) = pipt::decode(blob, origin)?;
            if used != len {
                return Err(Error::format(origin, format!("entry {name} has trailing bytes")));
            }
            let (slot, key) = [PARAM, OPTIM, BEST]
                .iter()
                .enumerate()
                .find_map(|(i, p)| name.strip_prefix(p).map(|k| (i, k.to_string())))
                .ok_or_else(|| Error::format(origin, format!("unknown entry {name}")))?;
            groups[slot].insert(key, t.to_f32());
        }
        let [params, optim, best] = groups;
        Ok(Self {
            optim: OptimState {
                v: optim,
                steps: header.optim_steps,
            },
            best: header.best.as_ref().map(|_| ModelParams { tensors: best }),
            params: ModelParams { tensors: params },
            header,
        })
    }

    /// Writes the container and returns its SHA-256 digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(crate::digest::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| Error::format(self.origin, "truncated checkpoint"))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
