//! Named-tensor checkpoint container.
//!
//! Little-endian binary. Header: magic `AFCK`, version u32, tensor count
//! u32. Per tensor: name length u16, UTF-8 name, rank u8, dims as u32s, then
//! raw 32-bit floats. A sha256 digest of everything before it trails the
//! file so any corrupted byte is detected on load.

use super::{io_err, IoError, Result};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"AFCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 32 {
        return Err(IoError::Truncated { path: display });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(IoError::ChecksumMismatch { path: display });
    }

    let mut cur = body;
    let truncated = || IoError::Truncated { path: path.display().to_string() };
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(truncated());
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };

    let magic = take(4)?;
    if magic != MAGIC {
        return Err(IoError::BadMagic { path: display });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(IoError::UnsupportedVersion { path: display, version });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| IoError::Truncated {
            path: path.display().to_string(),
        })?;
        let rank = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(4 * numel)?;
        let mut data = Vec::with_capacity(numel);
        let mut reader = raw;
        let mut chunk = [0u8; 4];
        for _ in 0..numel {
            reader.read_exact(&mut chunk).map_err(|_| truncated())?;
            data.push(f32::from_le_bytes(chunk));
        }
        let tensor = Tensor::new(&shape, data).map_err(|_| IoError::ChecksumMismatch {
            path: path.display().to_string(),
        })?;
        out.push((name, tensor));
    }
    if !cur.is_empty() {
        return Err(IoError::Truncated { path: path.display().to_string() });
    }
    Ok(out)
}

/// Hex sha256 of a checkpoint file, recorded in provenance records.
pub fn checkpoint_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
