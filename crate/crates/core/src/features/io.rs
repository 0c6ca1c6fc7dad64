//! `MPF1` feature files: magic, u32 rows, u32 cols, u8 kind tag, then
//! `rows × cols` little-endian f32 values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{FeatureKind, FeatureMatrix, Matrix};

const MAGIC: &[u8; 4] = b"MPF1";
const HEADER_LEN: usize = 13;

pub fn encode_features(m: &FeatureMatrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values().data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.push(m.kind().tag());
    for v in m.values().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::FeatureFormat("missing MPF1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let kind = FeatureKind::from_tag(bytes[12])
        .ok_or_else(|| Error::FeatureFormat(format!("unknown kind tag {}", bytes[12])))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::FeatureFormat(format!(
            "{rows}x{cols} payload needs {} bytes, found {}",
            rows * cols * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(Matrix::new(rows, cols, data)?, kind, kind.frame_spec())
        .map_err(|e| Error::FeatureFormat(e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix<f32>> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
