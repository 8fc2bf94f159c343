//! Binary tensor file format, used for checkpoints and dataset caches.
//!
//! Layout: magic bytes `TNSR`, version u32 = 1, dtype code u8 (1 = f32,
//! 2 = f64), ndim u32 = 4, four u32 dims, then the little-endian payload
//! in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::{Shape, Tensor4};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

pub fn encode<S: Scalar>(tensor: &Tensor4<S>) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(4 + 4 + 1 + 4 + 16 + tensor.numel() * S::DTYPE.byte_width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::DTYPE.code());
    out.extend_from_slice(&4u32.to_le_bytes());
    for dim in [shape.n, shape.c, shape.h, shape.w] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Tensor4<S>> {
    let fail = |msg: &str| Error::Format(format!("tensor file: {msg}"));
    if bytes.len() < 29 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic, expected TNSR"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(bytes[8])
        .ok_or_else(|| fail(&format!("unknown dtype code {}", bytes[8])))?;
    if dtype != S::DTYPE {
        return Err(fail(&format!(
            "dtype mismatch: file has {:?}, caller expects {:?}",
            dtype,
            S::DTYPE
        )));
    }
    let ndim = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
    if ndim != 4 {
        return Err(fail(&format!("expected 4 dims, file has {ndim}")));
    }
    let mut dims = [0usize; 4];
    for (i, dim) in dims.iter_mut().enumerate() {
        let off = 13 + 4 * i;
        *dim = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let width = S::DTYPE.byte_width();
    let payload = &bytes[29..];
    if payload.len() != shape.numel() * width {
        return Err(fail(&format!(
            "payload length {} does not match shape {shape}",
            payload.len()
        )));
    }
    let data: Vec<S> = payload.chunks_exact(width).map(S::read_le).collect();
    Tensor4::from_data(shape, data)
}

pub fn write_file<S: Scalar>(path: &Path, tensor: &Tensor4<S>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(&encode(tensor))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_file<S: Scalar>(path: &Path) -> Result<Tensor4<S>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode(&bytes)
}
