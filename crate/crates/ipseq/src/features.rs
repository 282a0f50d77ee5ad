//! Feature-sequence files: `IKCF`, version, T, d (u32 each), then T·d
//! little-endian f64 values in row-major order.

use std::path::Path;

use ipseq_core::tensor::Tensor;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IKCF";
pub const VERSION: u32 = 1;
const HEADER_BYTES: u64 = 16;

pub fn encode_feature_sequence(rows: &Tensor) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(rows.rows() as u32);
    w.u32(rows.cols() as u32);
    for &v in rows.data() {
        w.f64(v);
    }
    w.buf
}

pub fn decode_feature_sequence(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut r = Reader::new(bytes, path);
    if bytes.len() < 4 || r.take(4)? != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "IKCF feature",
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            version,
        });
    }
    let t = r.u32()? as u64;
    let d = r.u32()? as u64;
    if t == 0 || d == 0 {
        return Err(Error::format(path, format!("empty feature sequence ({t}×{d})")));
    }
    let expected = HEADER_BYTES + t * d * 8;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = (0..t * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, format!("non-finite value at index {i}")));
    }
    Ok(Tensor::matrix(t as usize, d as usize, data))
}

pub fn write_feature_sequence(path: &Path, rows: &Tensor) -> Result<()> {
    write_file(path, &encode_feature_sequence(rows))
}

pub fn load_feature_sequence(path: &Path) -> Result<Tensor> {
    decode_feature_sequence(&read_file(path)?, path)
}
