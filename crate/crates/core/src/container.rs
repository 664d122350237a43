//! Binary tensor container shared by field checkpoints (`NRDF`), embedding
//! tables (`NRDE`) and toy-prior weights (`NRDT`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        [u8; 4]
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 TOML (the config block)
//! tensor_count u32
//! per tensor:  rank u32, dims u32 x rank, values f32 x product(dims)
//! ```
//!
//! Values are stored as `f32`; a tensor whose values are all
//! `f32`-representable round-trips bit-exactly.

use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub header: String,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(magic: [u8; 4], header: String, tensors: Vec<Tensor>) -> Self {
        Self { magic, header, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|t| 4 + 4 * t.rank() + 4 * t.numel()).sum();
        let mut out = Vec::with_capacity(16 + self.header.len() + payload);
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parse a container, requiring `expected_magic`.
    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != expected_magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&expected_magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported container version {version} (this build reads {VERSION})"
            )));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|e| Error::format(format!("config block is not UTF-8: {e}")))?
            .to_string();
        let count = r.u32()? as usize;
        // each tensor needs at least its rank word
        if count > r.remaining() / 4 {
            return Err(Error::format(format!("tensor count {count} exceeds payload")));
        }
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let rank = r.u32()? as usize;
            if rank > MAX_RANK {
                return Err(Error::format(format!("tensor {i} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::format(format!("tensor {i} size overflows")))?;
                shape.push(d);
            }
            if numel > r.remaining() / 4 {
                return Err(Error::format(format!(
                    "tensor {i} declares {numel} values but only {} bytes remain",
                    r.remaining()
                )));
            }
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { magic, header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_magic: [u8; 4]) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, expected_magic)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(format!(
                "truncated: needed {n} bytes at offset {}, {} remain",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
