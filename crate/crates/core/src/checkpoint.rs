//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | 8 bytes `HBRCKPT\0`                    |
//! | version          | u32 (= 1)                              |
//! | config hash      | 32 bytes (SHA-256 of the config JSON)  |
//! | epoch            | u64, epochs completed                  |
//! | step             | u64, optimizer steps taken             |
//! | input dim        | u32                                    |
//! | hidden count `h` | u32                                    |
//! | hidden sizes     | `h` × u32                              |
//! | embedding dim    | u32                                    |
//! | classes          | u32                                    |
//! | scenes           | u32                                    |
//! | has velocity     | u8 (0 or 1)                            |
//! | parameters       | f64 arrays in `ModelParams::tensors` order, row-major |
//! | velocity         | same arrays again, when present        |
//!
//! Nothing follows the last array; trailing bytes are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams, Velocity};

pub const MAGIC: &[u8; 8] = b"HBRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub epoch: u64,
    pub step: u64,
    pub params: ModelParams,
    pub velocity: Option<Velocity>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensors(out: &mut Vec<u8>, params: &ModelParams) {
    for (_, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self, params: &mut ModelParams) -> Result<()> {
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
            }
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self.params.dims();
        let mut out = Vec::with_capacity(64 + 16 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut out, dims.input_dim)?;
        put_u32(&mut out, dims.hidden.len())?;
        for &h in &dims.hidden {
            put_u32(&mut out, h)?;
        }
        put_u32(&mut out, dims.embedding_dim)?;
        put_u32(&mut out, dims.num_classes)?;
        put_u32(&mut out, dims.num_scenes)?;
        out.push(u8::from(self.velocity.is_some()));
        put_tensors(&mut out, &self.params);
        if let Some(v) = &self.velocity {
            if v.dims() != dims {
                return Err(Error::Checkpoint("velocity layout differs from parameters".into()));
            }
            put_tensors(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let epoch = r.u64()?;
        let step = r.u64()?;
        let input_dim = r.u32()?;
        let n_hidden = r.u32()?;
        if n_hidden > 1024 {
            return Err(Error::Checkpoint(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let dims = ModelDims {
            input_dim,
            hidden,
            embedding_dim: r.u32()?,
            num_classes: r.u32()?,
            num_scenes: r.u32()?,
        };
        let has_velocity = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad velocity flag {b}"))),
        };
        let mut params = ModelParams::zeros(&dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        r.tensors(&mut params)?;
        let velocity = if has_velocity {
            let mut v = params.zeros_like();
            r.tensors(&mut v)?;
            Some(v)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config_hash,
            epoch,
            step,
            params,
            velocity,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
