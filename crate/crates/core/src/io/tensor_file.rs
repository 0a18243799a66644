//! Binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..8   magic "LAM3DT01"
//! bytes 8..12  rank as u32
//! then         rank extents, u32 each
//! then         row-major f32 payload, product(extents) values
//! ```
//!
//! Rank 0 is a valid container: no extents, and the payload holds exactly
//! one value (the product of zero extents is 1).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"LAM3DT01";

/// Sanity cap so corrupt headers fail fast instead of allocating wildly.
const MAX_RANK: u32 = 16;

pub fn write_tensor_file(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::shape(format!(
            "tensor file {}: shape {:?} wants {} values, got {}",
            path.display(),
            shape,
            numel,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(12 + 4 * shape.len() + 4 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        if d > u32::MAX as usize {
            return Err(Error::shape(format!("tensor file: extent {} exceeds u32", d)));
        }
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor_bytes(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

fn parse_tensor_bytes(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::data("truncated header".to_string()));
    }
    if &bytes[..8] != TENSOR_MAGIC {
        return Err(Error::data(format!(
            "bad magic {:?}, want {:?}",
            &bytes[..8],
            TENSOR_MAGIC
        )));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if rank > MAX_RANK {
        return Err(Error::data(format!("rank {} exceeds cap {}", rank, MAX_RANK)));
    }
    let rank = rank as usize;
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::data("truncated extents".to_string()));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: u64 = 1;
    for i in 0..rank {
        let d = u32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().unwrap()) as u64;
        numel = numel.saturating_mul(d);
        shape.push(d as usize);
    }
    let want = header as u64 + numel * 4;
    if bytes.len() as u64 != want {
        return Err(Error::data(format!(
            "payload length {} does not match shape {:?} ({} bytes expected)",
            bytes.len() - header,
            shape,
            numel * 4
        )));
    }
    let mut data = Vec::with_capacity(numel as usize);
    for chunk in bytes[header..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((shape, data))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_tensor_file(path, t.shape(), &t.to_vec())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let (shape, data) = read_tensor_file(path)?;
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lt");
        let mut rng = Rng::seed_from(1);
        let t = Tensor::randn(&[3, 4, 5], &mut rng);
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let (a, b) = (t.to_vec(), back.to_vec());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lt");
        write_tensor_file(&path, &[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"LAM3DT01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 6 * 4);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rank_zero_scalar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lt");
        write_tensor_file(&path, &[], &[42.5]).unwrap();
        let (shape, data) = read_tensor_file(&path).unwrap();
        assert!(shape.is_empty());
        assert_eq!(data, vec![42.5]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lt");

        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
        assert!(read_tensor_file(&path).is_err());

        // right magic, payload shorter than the shape demands
        let mut bytes = Vec::new();
        bytes.extend_from_slice(TENSOR_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tensor_file(&path).is_err());

        std::fs::write(&path, b"LAM3D").unwrap();
        assert!(read_tensor_file(&path).is_err());
    }
}
