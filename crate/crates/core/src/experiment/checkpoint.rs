//! Binary checkpoints: a versioned header with JSON metadata followed by
//! named `f64` blobs.
//!
//! ```text
//! "SLADCKPT" | u32 version | u32 meta_len | meta (JSON) | u32 count
//! count × ( u32 name_len | name | u32 ndim | ndim × u64 dim | f64… )
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SLADCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn from_tensors(meta: serde_json::Value, tensors: &[(String, Tensor)]) -> Self {
        Checkpoint {
            meta,
            blobs: tensors
                .iter()
                .map(|(name, t)| Blob {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len_u32(self.blobs.len())?.to_le_bytes());
        for b in &self.blobs {
            if b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::Checkpoint(format!("blob '{}' shape disagrees with data", b.name)));
            }
            out.extend_from_slice(&len_u32(b.name.len())?.to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&len_u32(b.shape.len())?.to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta = serde_json::from_slice(take(&mut r, meta_len)?)?;
        let count = read_u32(&mut r)? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut r, n.checked_mul(8).ok_or_else(|| Error::Checkpoint("blob too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { meta, blobs })
    }

    /// Write through a temporary file and rename, so a crash never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Copy every blob into the tensor of the same name. Names or shapes
    /// that do not line up are errors; nothing is written in that case.
    pub fn restore_into(&self, tensors: &[(String, Tensor)]) -> Result<()> {
        let mut pairs = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            let blob = self
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("no blob named '{name}'")))?;
            if blob.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "blob '{name}' has shape {:?}, tensor has {:?}",
                    blob.shape,
                    t.shape()
                )));
            }
            pairs.push((blob, t));
        }
        for (blob, t) in pairs {
            t.data_mut().copy_from_slice(&blob.data);
        }
        Ok(())
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
