//! Binary checkpoint: config, step counter and named f32 tensors.
//!
//! ```text
//! magic        8 bytes  "FSARCKPT"
//! schema       u32
//! step         u64
//! raw_dim      u32
//! config_len   u32, then config_len bytes of canonical config text
//! tensors      u32 count, then per tensor:
//!                u16 name_len, name, u8 ndim, ndim x u32 dims, f32 values
//! ```
//! All integers little-endian. Parameters are stored at f32 precision, which
//! is exactly the precision they are kept at during training.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::model::ModelParams;
use crate::error::{FsarError, Result};
use crate::nn::Params;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSARCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.raw_dim() as u32).to_le_bytes());
        let cfg = self.config.to_kv_string();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let mut tensors = Vec::new();
        self.params.visit("", &mut |name, shape, data| {
            tensors.push((name.to_string(), shape.to_vec(), data.to_vec()));
        });
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for x in data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(FsarError::malformed(origin, "not a checkpoint (bad magic)"));
        }
        let schema = r.u32()?;
        if schema != SCHEMA_VERSION {
            return Err(FsarError::SchemaMismatch(format!(
                "{origin}: checkpoint schema {schema}, this build reads {SCHEMA_VERSION}"
            )));
        }
        let step = r.u64()?;
        let raw_dim = r.u32()? as usize;
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| FsarError::malformed(origin, "config text is not UTF-8"))?;
        let config = RunConfig::parse(cfg_text)
            .map_err(|e| FsarError::SchemaMismatch(format!("{origin}: embedded config rejected: {e}")))?;

        // The config fixes every shape; build a template and fill it in.
        let mut params = ModelParams::init(&config, raw_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut expected = Vec::new();
        params.visit("", &mut |n, s, _| expected.push((n.to_string(), s.to_vec())));
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(FsarError::SchemaMismatch(format!(
                "{origin}: {count} tensors stored, config implies {}",
                expected.len()
            )));
        }
        let mut flat = Vec::with_capacity(params.num_params());
        for (name, shape) in &expected {
            let nlen = r.u16()? as usize;
            let got = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| FsarError::malformed(origin, "tensor name is not UTF-8"))?;
            let ndim = r.take(1)?[0] as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if got != name || &dims != shape {
                return Err(FsarError::SchemaMismatch(format!(
                    "{origin}: tensor `{got}` {dims:?}, expected `{name}` {shape:?}"
                )));
            }
            let n: usize = dims.iter().product();
            for _ in 0..n {
                let v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                if !v.is_finite() {
                    return Err(FsarError::NonFinite(format!("{origin}: tensor `{name}`")));
                }
                flat.push(f64::from(v));
            }
        }
        if r.pos != bytes.len() {
            return Err(FsarError::malformed(
                format!("{origin}@{}", r.pos),
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        params.assign_flat(&flat);
        Ok(Self { config, step, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| FsarError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| FsarError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FsarError::malformed(
                format!("{}@{}", self.origin, self.pos),
                format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
