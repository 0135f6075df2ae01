//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "CATGENCK"
//! version      u32      currently 1
//! config       u32 byte length + UTF-8 `key=value\n` lines (sorted keys)
//! vocabulary   u32 count, then per token: u32 byte length + UTF-8
//! tensors      u32 count, then per tensor:
//!                u32 name length + name, u8 flags (bit 0 = trainable),
//!                u32 rank, u64 per dimension, f64 per element
//! optimizer    u8 present; if 1: u64 step, u32 count, then `count`
//!                first-moment tensors followed by `count` second-moment
//!                tensors, each as u32 rank, u64 dims, f64 data
//! ```
//!
//! Floats are stored by bit pattern, so load → save reproduces the file
//! byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{parse_key_values, Vocabulary};
use crate::model::{ModelConfig, ModelParams, TENSOR_NAMES};
use crate::nn::{AdamState, Tensor};

pub const MAGIC: &[u8; 8] = b"CATGENCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic header)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("invalid UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Format("tensor too large".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&shape, data))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let cfg: String = self
            .config
            .to_key_values()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        w.str(&cfg);
        w.u32(self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            w.str(t);
        }
        let tensors = self.params.tensors();
        w.u32(tensors.len() as u32);
        for (i, (name, t)) in TENSOR_NAMES.iter().zip(tensors).enumerate() {
            w.str(name);
            let trainable = match i {
                0 => self.params.glove.trainable,
                1 => self.params.learned_embed.trainable,
                _ => true,
            };
            w.u8(u8::from(trainable));
            w.tensor(t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(st) => {
                w.u8(1);
                w.u64(st.step);
                w.u32(st.m.len() as u32);
                st.m.iter().chain(&st.v).for_each(|t| w.tensor(t));
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let cfg_text = r.str()?;
        let kv: BTreeMap<String, String> = parse_key_values(&cfg_text, Path::new("<checkpoint>"))
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut config = ModelConfig::default();
        let unknown = config
            .apply_key_values(&kv)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(CheckpointError::Format(format!("unknown config keys {unknown:?}")));
        }
        config.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;

        let n = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            tokens.push(r.str()?);
        }
        let vocab = Vocabulary::from_tokens(tokens).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if vocab.len() != config.vocab_size {
            return Err(CheckpointError::Format(format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }

        let count = r.u32()? as usize;
        if count != TENSOR_NAMES.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} tensors, found {count}",
                TENSOR_NAMES.len()
            )));
        }
        let mut params = ModelParams::zeros(&config);
        let mut flags = Vec::with_capacity(count);
        {
            let slots = params.tensors_mut();
            for (slot, expected) in slots.into_iter().zip(TENSOR_NAMES) {
                let name = r.str()?;
                if name != expected {
                    return Err(CheckpointError::Format(format!(
                        "expected tensor {expected}, found {name}"
                    )));
                }
                flags.push(r.u8()? & 1 == 1);
                let t = r.tensor()?;
                if t.shape() != slot.shape() {
                    return Err(CheckpointError::Format(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
            }
        }
        params.glove.trainable = flags[0];
        params.learned_embed.trainable = flags[1];

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let k = r.u32()? as usize;
                let shapes = params.trainable_shapes();
                if k != shapes.len() {
                    return Err(CheckpointError::Format(
                        "optimizer state does not match parameters".into(),
                    ));
                }
                let mut m = Vec::with_capacity(k);
                let mut v = Vec::with_capacity(k);
                for i in 0..2 * k {
                    let t = r.tensor()?;
                    if t.shape() != shapes[i % k].as_slice() {
                        return Err(CheckpointError::Format("optimizer tensor shape mismatch".into()));
                    }
                    if i < k {
                        m.push(t)
                    } else {
                        v.push(t)
                    }
                }
                Some(AdamState { step, m, v })
            }
            f => return Err(CheckpointError::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self {
            config,
            vocab,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
