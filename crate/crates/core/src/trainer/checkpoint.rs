//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic "SEGADAPT" | u32 version
//! u64 len + arch TOML | u64 len + train config TOML | u64 init seed
//! u32 tensor count, each: u32 name len + name | u32 ndim | u64 dims | f64 data
//! u8 optimizer (0 sgd, 1 adam) | u64 step
//! u32 moment count, each: u32 name len + name | u64 len | f64 m | f64 v
//! u64 epoch | u64 history len, each: u64 epoch | u64 step | 6 x f64
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::{OptimizerKind, TrainConfig};
use super::log::StepRecord;
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::model::{ArchConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEGADAPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<StepRecord>,
}

impl Checkpoint {
    /// Untrained state for `arch` and `config`.
    pub fn fresh(arch: &ArchConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(arch, crate::seed::derive(config.seed, &[0x1417]))?;
        Ok(Self {
            optimizer: OptimizerState::new(config.optimizer, &params),
            params,
            config: config.clone(),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut w, CHECKPOINT_VERSION);
        let arch = toml::to_string(&self.params.arch).map_err(|e| Error::Config(e.to_string()))?;
        put_bytes64(&mut w, arch.as_bytes());
        put_bytes64(&mut w, self.config.to_toml()?.as_bytes());
        put_u64(&mut w, self.params.seed);

        put_u32(&mut w, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_name(&mut w, name);
            put_u32(&mut w, t.shape().len() as u32);
            for &d in t.shape() {
                put_u64(&mut w, d as u64);
            }
            put_f64s(&mut w, t.data());
        }

        w.push(match self.optimizer.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        });
        put_u64(&mut w, self.optimizer.step);
        put_u32(&mut w, self.optimizer.moments.len() as u32);
        for (name, (m, v)) in &self.optimizer.moments {
            put_name(&mut w, name);
            put_u64(&mut w, m.len() as u64);
            put_f64s(&mut w, m);
            put_f64s(&mut w, v);
        }

        put_u64(&mut w, self.epoch as u64);
        put_u64(&mut w, self.history.len() as u64);
        for s in &self.history {
            put_u64(&mut w, s.epoch as u64);
            put_u64(&mut w, s.step as u64);
            let l = &s.loss;
            put_f64s(&mut w, &[l.l0, l.l1, l.l2, l.lambda1, l.lambda2, l.total]);
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        r.pos = 8;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let arch: ArchConfig = toml::from_str(&r.text64()?).map_err(|e| Error::Format(format!("arch section: {e}")))?;
        let config = TrainConfig::from_toml(&r.text64()?).map_err(|e| Error::Format(format!("config section: {e}")))?;
        let seed = r.u64()?;

        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.name()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::Corrupt(format!("tensor {name} has an impossible shape")))?;
            let data = r.f64s(len)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
            tensors.insert(name, t);
        }
        let params = ModelParams::from_tensors(arch, seed, tensors)?;

        let kind = match r.u8()? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            other => return Err(Error::Format(format!("unknown optimizer code {other}"))),
        };
        let step = r.u64()?;
        let mcount = r.u32()?;
        let mut moments = BTreeMap::new();
        for _ in 0..mcount {
            let name = r.name()?;
            let len = r.u64()? as usize;
            let m = r.f64s(len)?;
            let v = r.f64s(len)?;
            moments.insert(name, (m, v));
        }

        let epoch = r.u64()? as usize;
        let hlen = r.u64()? as usize;
        let mut history = Vec::with_capacity(hlen.min(1 << 20));
        for _ in 0..hlen {
            let epoch = r.u64()? as usize;
            let step = r.u64()? as usize;
            let f = r.f64s(6)?;
            history.push(StepRecord {
                epoch,
                step,
                loss: LossBreakdown {
                    l0: f[0],
                    l1: f[1],
                    l2: f[2],
                    lambda1: f[3],
                    lambda2: f[4],
                    total: f[5],
                },
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            params,
            optimizer: OptimizerState { kind, step, moments },
            config,
            epoch,
            history,
        })
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, cp.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes64(w: &mut Vec<u8>, b: &[u8]) {
    put_u64(w, b.len() as u64);
    w.extend_from_slice(b);
}

fn put_name(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn utf8(bytes: &[u8]) -> Result<String> {
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt("text field is not UTF-8".into()))
    }

    fn text64(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        Self::utf8(self.take(n)?)
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        Self::utf8(self.take(n)?)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
