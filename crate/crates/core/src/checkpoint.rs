//! `.cgen` checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "CGEN" | version u32 = 1 | meta_len u64 | meta JSON (meta_len bytes)
//! tensor_count u32
//! per tensor: name_len u16 | name | rank u8 | dims u64 × rank | f32 × prod(dims)
//! ```
//!
//! Parameters are held in f64 in memory and stored as f32.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::net::{ArchConfig, ModelParams, Normalizer};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CGEN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub epoch: usize,
    /// Ranking value: task-weighted validation MSE in normalized space.
    pub val_mse: f64,
    /// Unweighted validation MSE per task.
    pub val_mse_per_task: Vec<f64>,
    pub normalizer: Normalizer,
    pub train_seed: u64,
}

impl CheckpointMeta {
    fn validate(&self) -> Result<()> {
        self.arch
            .validate()
            .map_err(|e| Error::Inconsistent(e.to_string()))?;
        let n = self.arch.n_tasks();
        if !(self.val_mse >= 0.0) || !self.val_mse.is_finite() {
            return Err(Error::Inconsistent(format!("val_mse {}", self.val_mse)));
        }
        if self.val_mse_per_task.len() != n
            || self.normalizer.mean.len() != n
            || self.normalizer.std.len() != n
        {
            return Err(Error::Inconsistent(
                "per-task metadata length differs from task count".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn epoch(&self) -> usize {
        self.meta.epoch
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.meta.arch
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.meta.normalizer
    }
}

pub fn encode(c: &Checkpoint) -> Result<Vec<u8>> {
    c.params.check_shapes(&c.meta.arch)?;
    let meta = serde_json::to_vec(&c.meta)?;
    let named = c.params.named(&c.meta.arch);
    let mut out = Vec::with_capacity(64 + meta.len() + 4 * c.params.num_scalars());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn decode_header(cur: &mut Cursor) -> Result<CheckpointMeta> {
    if cur.take(4, "magic").map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let len = cur.u64("metadata length")?;
    let len = usize::try_from(len).map_err(|_| Error::Truncated("metadata length".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(len, "metadata")?)
        .map_err(|e| Error::Inconsistent(format!("metadata: {e}")))?;
    meta.validate()?;
    Ok(meta)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let meta = decode_header(&mut cur)?;
    let count = cur.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Inconsistent("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Inconsistent(format!("tensor `{name}` is impossibly large")))?;
        let raw = cur.take(4 * n, &format!("tensor `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        named.push((name, Tensor { shape, data }));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Inconsistent(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let params = ModelParams::from_named(&meta.arch, named)?;
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(c)?;
    fs::write(path, bytes).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).at(path)?)
}

/// Reads only the metadata block, without the tensors.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut f = fs::File::open(path).at(path)?;
    let mut head = [0u8; 16];
    let n = read_up_to(&mut f, &mut head).at(path)?;
    let mut cur = Cursor {
        buf: &head[..n],
        pos: 0,
    };
    if n < 4 || head[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    cur.take(4, "magic")?;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let len = cur.u64("metadata length")?;
    let mut buf = head.to_vec();
    let mut meta = Vec::new();
    f.take(len).read_to_end(&mut meta).at(path)?;
    buf.extend_from_slice(&meta);
    decode_header(&mut Cursor { buf: &buf, pos: 0 })
}

fn read_up_to(f: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match f.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_model;

    fn sample(n_conv: usize) -> Checkpoint {
        let arch = ArchConfig {
            d_init: 4,
            d_edge: 3,
            d_atom: 2,
            d_hidden: 3,
            n_conv,
            tasks: vec!["formation_energy".into(), "band_gap".into()],
            seed: 17,
        };
        Checkpoint {
            params: init_model(&arch).unwrap().to_storage_precision(),
            meta: CheckpointMeta {
                arch,
                epoch: 7,
                val_mse: 0.123456789,
                val_mse_per_task: vec![0.1, 0.2],
                normalizer: Normalizer {
                    mean: vec![-1.0, 0.5],
                    std: vec![0.3, 2.0],
                },
                train_seed: 99,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample(3);
        let back = decode(&encode(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cgen");
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
        assert_eq!(read_meta(&p).unwrap(), c.meta);
    }

    #[test]
    fn storage_rounds_to_f32() {
        let mut c = sample(1);
        c.params.fc_w.data[0] = 0.1;
        let back = decode(&encode(&c).unwrap()).unwrap();
        assert_eq!(back.params.fc_w.data[0], 0.1f32 as f64);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample(1)).unwrap();
        assert_eq!(&bytes[..4], b"CGEN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(meta["epoch"], 7);
        assert_eq!(meta["arch"]["n_conv"], 1);
    }

    #[test]
    fn corrupt_files() {
        let mut bytes = encode(&sample(2)).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::VersionMismatch(2))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
        assert!(matches!(decode(b"CG"), Err(Error::BadMagic)));
    }

    #[test]
    fn arch_tensor_disagreement() {
        // tensors of a 5-layer net under metadata claiming 3 layers
        let five = sample(5);
        let mut three_meta = five.meta.clone();
        three_meta.arch.n_conv = 3;
        let mut bytes = encode(&five).unwrap();
        let old_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta = serde_json::to_vec(&three_meta).unwrap();
        bytes.splice(16..16 + old_len, meta.iter().copied());
        bytes[8..16].copy_from_slice(&(meta.len() as u64).to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Inconsistent(_))));
    }
}
