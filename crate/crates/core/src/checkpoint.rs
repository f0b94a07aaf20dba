//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CHRATTN\0"
//! version  u32      1
//! config   u32 length + UTF-8 JSON of ModelConfig
//! seed     u64
//! blocks   u32 count, then per block:
//!          u32 length + UTF-8 name
//!          u32 ndim, ndim x u64 dims
//!          prod(dims) x f64 payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::model::{ModelConfig, ParameterStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CHRATTN\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParameterStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.seed.to_le_bytes());
        let blocks = self.params.named_tensors();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, t) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
        let seed = r.u64()?;
        let mut params = ParameterStore::zeros(&config)?;
        let count = r.u32()? as usize;
        let mut slots = params.named_tensors_mut();
        if count != slots.len() {
            return Err(bad(format!(
                "{count} blocks stored, configuration needs {}",
                slots.len()
            )));
        }
        for (expected_name, slot) in slots.iter_mut() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("block name is not UTF-8"))?;
            if name != expected_name {
                return Err(bad(format!("expected block {expected_name}, found {name}")));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            if shape != slot.shape() {
                return Err(bad(format!(
                    "block {name} has shape {shape:?}, expected {:?}",
                    slot.shape()
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            **slot = Tensor::new(shape, data).map_err(|e| bad(format!("block {name}: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last block"));
        }
        drop(slots);
        Ok(Checkpoint {
            config,
            seed,
            params,
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<checkpoint>", e))?;
        Checkpoint::from_bytes(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn sample(variant: Variant) -> Checkpoint {
        let config = ModelConfig {
            d: 3,
            d_hm: 2,
            mlp_hidden: 4,
            mark_order: Some(vec![1, 0]),
            ..ModelConfig::new(2, 4, variant)
        };
        Checkpoint {
            params: ParameterStore::init(&config, 17).unwrap(),
            config,
            seed: 17,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let ck = sample(v);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample(Variant::LstmAlphaBeta).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(Checkpoint::from_bytes(&nan).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let ck = sample(Variant::LstmAlpha);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
