//! Binary checkpoints.
//!
//! Layout (little-endian): magic `CSEGCKPT`, `u32` version, `u32`-prefixed
//! JSON training configuration, `u64` iteration, `u64` best iteration and
//! `f64` best score (`u64::MAX`/NaN when no validation has run), `u32` array
//! count, then per array a `u32`-prefixed UTF-8 name, `u32` rank, `u64` dims
//! and `f64` values. A trailing SHA-256 covers every preceding byte.
//!
//! Arrays are `param/<name>`, `adadelta.sq_grad/<name>` and
//! `adadelta.sq_delta/<name>`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::adadelta::OptimizerState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::mdgru::{MdGru, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    /// Optimizer steps taken.
    pub iteration: u64,
    pub best: Option<(u64, f64)>,
    pub params: ParamSet,
    pub optimizer: OptimizerState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::PayloadSize {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.format("name is not UTF-8"))
    }

    fn format(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

impl ModelCheckpoint {
    pub fn model(&self) -> Result<MdGru> {
        MdGru::from_params(self.config.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let json = serde_json::to_vec(&self.config)?;
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        put_u64(&mut out, self.iteration);
        let (bi, bs) = self.best.unwrap_or((u64::MAX, f64::NAN));
        put_u64(&mut out, bi);
        out.extend_from_slice(&bs.to_le_bytes());
        put_u32(&mut out, (3 * self.params.len()) as u32);
        for (name, t) in self.params.iter() {
            put_array(&mut out, &format!("param/{name}"), t.shape(), t.data());
        }
        for (k, name) in self.params.names().iter().enumerate() {
            let shape = [self.optimizer.sq_grad[k].len()];
            put_array(&mut out, &format!("adadelta.sq_grad/{name}"), &shape, &self.optimizer.sq_grad[k]);
        }
        for (k, name) in self.params.names().iter().enumerate() {
            let shape = [self.optimizer.sq_delta[k].len()];
            put_array(&mut out, &format!("adadelta.sq_delta/{name}"), &shape, &self.optimizer.sq_delta[k]);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "not a checkpoint file".into(),
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let actual = Sha256::digest(body);
        if actual.as_slice() != digest {
            let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                expected: hex(digest),
                actual: hex(&actual),
            });
        }
        let mut r = Reader {
            bytes: body,
            pos: 8,
            path,
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let n = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(n)?)?;
        let iteration = r.u64()?;
        let bi = r.u64()?;
        let bs = r.f64()?;
        let best = (bi != u64::MAX).then_some((bi, bs));
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        let mut sq_grad = Vec::new();
        let mut sq_delta = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if let Some(p) = name.strip_prefix("param/") {
                params.push(p, Tensor::new(shape, data)?);
            } else if name.starts_with("adadelta.sq_grad/") {
                sq_grad.push(data);
            } else if name.starts_with("adadelta.sq_delta/") {
                sq_delta.push(data);
            } else {
                return Err(r.format(&format!("unknown array '{name}'")));
            }
        }
        if r.pos != body.len() {
            return Err(r.format("trailing bytes after arrays"));
        }
        let optimizer = OptimizerState { sq_grad, sq_delta };
        if !optimizer.matches(&params) {
            return Err(r.format("optimizer state does not match parameters"));
        }
        let model = MdGru::from_params(config.model.clone(), params)?;
        Ok(Self {
            config,
            iteration,
            best,
            params: model.params().clone(),
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
