//! ACCK checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "ACCK"
//! version    u32      currently 1
//! cfg_hash   32 bytes SHA-256 of the run configuration
//! meta_len   u32      followed by meta_len bytes of UTF-8 metadata (JSON by convention)
//! n_params   u32
//! repeated n_params times:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, rank x u64 dims
//!   data     product(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{ParamStore, Result, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"ACCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub metadata: String,
    pub params: Vec<(String, Tensor)>,
}

/// SHA-256 of arbitrary bytes, used for configuration hashes.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn fmt_err(msg: impl Into<String>) -> TensorError {
    TensorError::Format(msg.into())
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config_hash: [u8; 32], metadata: impl Into<String>) -> Self {
        Self {
            config_hash,
            metadata: metadata.into(),
            params: store.iter().map(|(_, p)| (p.name().to_string(), p.value().clone())).collect(),
        }
    }

    /// Copy every stored tensor into the matching parameter of `store`.
    ///
    /// Every parameter of `store` must be present with an identical shape.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.get(id).name().to_string();
            let (_, t) = self
                .params
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| fmt_err(format!("checkpoint lacks parameter {name}")))?;
            store.set_value(id, t.clone())?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic, expected ACCK"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec()).map_err(|_| fmt_err("metadata is not UTF-8"))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| fmt_err("name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fmt_err("shape overflow"))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| fmt_err("shape overflow"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config_hash, metadata, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| fmt_err("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: sha256(b"cfg"),
            metadata: "{\"mode\":\"contrast\"}".into(),
            params: vec![
                ("a.w".into(), Tensor::new(&[2, 2], vec![1.0, -2.5, 3.0, 0.125]).unwrap()),
                ("b".into(), Tensor::scalar(7.0)),
            ],
        }
    }

    #[test]
    fn bytes_roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"ACCK");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn apply_checks_names_and_shapes() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::zeros(&[2, 2])).unwrap();
        sample().apply_to(&mut store).unwrap();
        assert_eq!(store.value(store.id("a.w").unwrap()).data()[1], -2.5);

        let mut other = ParamStore::new();
        other.add("a.w", Tensor::zeros(&[4])).unwrap();
        assert!(sample().apply_to(&mut other).is_err());
        let mut missing = ParamStore::new();
        missing.add("zzz", Tensor::zeros(&[1])).unwrap();
        assert!(sample().apply_to(&mut missing).is_err());
    }
}
