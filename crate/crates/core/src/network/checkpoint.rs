//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "TXSTYLE\0"
//! version    u32
//! kind       u8       0 = U-Net, 1 = fast (encoder + decoder)
//! dtype      u8       0 = f32, 1 = f64
//! channels   u32 count, then u32 each
//! tensors    u32 count, then per tensor:
//!              name (u32 length + UTF-8), rank u32, dims u64 each,
//!              little-endian element data
//! checksum   32 bytes SHA-256 of everything above
//! ```
//! All integers little-endian.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"TXSTYLE\0";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    UNet,
    Fast,
}

#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub kind: NetKind,
    pub dtype: DType,
    pub channels: Vec<u32>,
    pub tensors: Vec<(String, Tensor)>,
}

impl CheckpointData {
    pub fn tensor_map(&self) -> HashMap<String, Tensor> {
        self.tensors.iter().cloned().collect()
    }
}

pub fn encode(data: &CheckpointData) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match data.kind {
        NetKind::UNet => 0,
        NetKind::Fast => 1,
    });
    out.push(match data.dtype {
        DType::F32 => 0,
        DType::F64 => 1,
        other => return Err(Error::invalid(format!("cannot checkpoint dtype {other:?}"))),
    });
    out.extend_from_slice(&(data.channels.len() as u32).to_le_bytes());
    for c in &data.channels {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(data.tensors.len() as u32).to_le_bytes());
    for (name, t) in &data.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.dims() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        let flat = t.flatten_all()?;
        match data.dtype {
            DType::F32 => {
                for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            _ => {
                for v in flat.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest[..]);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Malformed("unexpected end of data".into()).into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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
}

pub fn decode(bytes: &[u8], device: &Device) -> Result<CheckpointData> {
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(CheckpointError::Checksum.into());
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body)[..] != *stored {
        return Err(CheckpointError::Checksum.into());
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let kind = match r.u8()? {
        0 => NetKind::UNet,
        1 => NetKind::Fast,
        k => return Err(CheckpointError::Malformed(format!("unknown network kind {k}")).into()),
    };
    let dtype = match r.u8()? {
        0 => DType::F32,
        1 => DType::F64,
        d => return Err(CheckpointError::Malformed(format!("unknown dtype tag {d}")).into()),
    };
    let channels = (0..r.u32()?).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let t = match dtype {
            DType::F32 => {
                let raw = r.take(n * 4)?;
                let v: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, dims, device)?
            }
            _ => {
                let raw = r.take(n * 8)?;
                let v: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, dims, device)?
            }
        };
        tensors.push((name, t));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()).into());
    }
    Ok(CheckpointData {
        kind,
        dtype,
        channels,
        tensors,
    })
}

pub fn write(path: impl AsRef<Path>, data: &CheckpointData) -> Result<()> {
    std::fs::write(path, encode(data)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>, device: &Device) -> Result<CheckpointData> {
    decode(&std::fs::read(path)?, device)
}
