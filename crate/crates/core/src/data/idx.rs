//! IDX reader (the MNIST distribution format).
//!
//! Header: two zero bytes, a type byte, a rank byte, then one big-endian
//! u32 per dimension. Unsigned-byte payloads are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn element_size(code: u8) -> Result<usize> {
    match code {
        0x08 | 0x09 => Ok(1),
        0x0B => Ok(2),
        0x0C | 0x0D => Ok(4),
        0x0E => Ok(8),
        other => Err(Error::format(format!("unknown IDX element type 0x{other:02X}"))),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format("bad IDX magic"));
    }
    let (code, rank) = (bytes[2], bytes[3] as usize);
    let size = element_size(code)?;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::format(format!("IDX header needs {header} bytes, file has {}", bytes.len())));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let expected = header + count * size;
    if bytes.len() != expected {
        return Err(Error::format(format!("IDX payload length mismatch: expected {expected} bytes, got {}", bytes.len())));
    }
    let payload = &bytes[header..];
    let data: Vec<f64> = match code {
        0x08 => payload.iter().map(|&b| b as f64 / 255.0).collect(),
        0x09 => payload.iter().map(|&b| b as i8 as f64).collect(),
        0x0B => payload.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]]) as f64).collect(),
        0x0C => payload.chunks_exact(4).map(|c| i32::from_be_bytes(c.try_into().expect("4")) as f64).collect(),
        0x0D => payload.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().expect("4")) as f64).collect(),
        _ => payload.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8"))).collect(),
    };
    let shape = if shape.is_empty() { vec![] } else { shape };
    Tensor::new(shape, data)
}

/// Raw unsigned bytes (labels) without scaling.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 || bytes[2] != 0x08 || bytes[3] != 1 {
        return Err(Error::format("IDX labels must be a rank-1 unsigned byte array"));
    }
    let n = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(format!("IDX payload length mismatch: expected {} bytes, got {}", 8 + n, bytes.len())));
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_idx(path: &Path) -> Result<Tensor> {
    parse_idx(&fs::read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Unsigned-byte IDX encoding of `bytes` with the given dims.
pub fn encode_idx_u8(dims: &[u32], bytes: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(bytes);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_image() {
        let bytes = [0, 0, 0x08, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51, 102];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn truncated_payload() {
        let bytes = [0, 0, 0x08, 1, 0, 0, 0, 4, 1, 2];
        let err = parse_idx(&bytes).unwrap_err().to_string();
        assert!(err.contains("expected 12") && err.contains("got 10"), "{err}");
        assert!(parse_idx(&[1, 0, 8, 1]).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let raw: Vec<u8> = (0..24).map(|v| (v * 10) as u8).collect();
        let enc = encode_idx_u8(&[2, 3, 4], &raw);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.idx");
        fs::write(&p, &enc).unwrap();
        let t = load_idx(&p).unwrap();
        let back: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, raw);
        let labels = encode_idx_u8(&[3], &[1, 5, 0]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 5, 0]);
    }
}
