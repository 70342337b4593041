use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor2D;
use crate::{Error, Result};

/// Binary checkpoint layout, all integers little-endian:
///
/// ```text
/// magic   4 bytes  "PHEW"
/// version u32      currently 1
/// count   u32      number of tensors
/// then per tensor:
///   kind  u8
///   rows  u32
///   cols  u32
///   data  rows*cols f32, row-major
/// ```
///
/// Values are f64 in memory and f32 on disk; loading widens back, so a
/// save/load/save cycle is byte-identical.
pub const MAGIC: &[u8; 4] = b"PHEW";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum TensorKind {
    DenseWeight = 1,
    DenseBias = 2,
    ConvKernel = 3,
    ConvBias = 4,
    Embedding = 5,
}

impl TensorKind {
    fn from_u8(v: u8) -> Option<TensorKind> {
        match v {
            1 => Some(TensorKind::DenseWeight),
            2 => Some(TensorKind::DenseBias),
            3 => Some(TensorKind::ConvKernel),
            4 => Some(TensorKind::ConvBias),
            5 => Some(TensorKind::Embedding),
            _ => None,
        }
    }
}

pub fn write_checkpoint_bytes(tensors: &[(TensorKind, &Tensor2D)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (kind, t) in tensors {
        out.push(*kind as u8);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, tensors: &[(TensorKind, &Tensor2D)]) -> Result<()> {
    let bytes = write_checkpoint_bytes(tensors);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<(TensorKind, Tensor2D)>> {
    let bad = |message: &str| Error::BadFileFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated file"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };

    if take(4)? != MAGIC {
        return Err(bad("bad magic, expected PHEW"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let kind_raw = take(1)?[0];
        let kind = TensorKind::from_u8(kind_raw)
            .ok_or_else(|| bad(&format!("tensor {i}: unknown kind {kind_raw}")))?;
        let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let payload = take(rows * cols * 4)?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(bad(&format!("tensor {i}: non-finite value")));
            }
            data.push(v);
        }
        tensors.push((kind, Tensor2D::from_vec(rows, cols, data)?));
    }
    if !cur.is_empty() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(tensors)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(TensorKind, Tensor2D)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_checkpoint_bytes(path, &bytes)
}
