//! The `CPD1` dense matrix format: magic `CPD1`, `u32` rows, `u32` columns,
//! then `f64` little-endian values in column-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 4] = b"CPD1";
const HEADER: usize = 12;

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err("missing CPD1 header".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or("matrix size overflows")?;
    if bytes.len() != expected {
        return Err(format!("{rows}x{cols} matrix needs {expected} bytes, file has {}", bytes.len()));
    }
    let data = bytes[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode(m)).map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|m| format_err(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) * (j as f64 - 0.3) / 7.0);
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"CPD1");
        assert_eq!(bytes.len(), 12 + 48);
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn column_major_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bytes = encode(&m);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 3.0);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = encode(&DMatrix::zeros(2, 2));
        bytes.pop();
        assert!(decode(&bytes).is_err());
        assert!(decode(b"CPD2\0\0\0\0\0\0\0\0").is_err());
    }
}
