//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MAES"            4 bytes
//! version           u32 (= 1)
//! tensor count      u32
//! per tensor:
//!   rank            u32
//!   dims            rank × u32
//!   data            product(dims) × f32
//! ```

use std::fs;
use std::path::Path;

use crate::model::{ModelParams, ModelSpec, WEIGHTS_VERSION};
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"MAES";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.weights.len() as u32).to_le_bytes());
    for t in &params.weights {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            message: format!("truncated file: expected {n} bytes of {what}, {} left", self.bytes.len() - self.pos),
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes the raw tensors of a weight file without checking them against an
/// architecture.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected \"MAES\"", String::from_utf8_lossy(magic)),
        });
    }
    let version_at = r.pos as u64;
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format {
            offset: version_at,
            message: format!("unsupported version {version}, expected {WEIGHTS_VERSION}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let rank_at = r.pos as u64;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format { offset: rank_at, message: format!("tensor {i} has unsupported rank {rank}") });
        }
        let dims_at = r.pos as u64;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::Format { offset: dims_at, message: format!("tensor {i} has invalid dims {dims:?}") })?;
        let byte_len = len.checked_mul(4).ok_or_else(|| Error::Format {
            offset: dims_at,
            message: format!("tensor {i} is too large"),
        })?;
        let raw = r.take(byte_len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos as u64, message: "trailing bytes after last tensor".into() });
    }
    Ok(tensors)
}

pub fn decode(bytes: &[u8], spec: &ModelSpec) -> Result<ModelParams> {
    let tensors = decode_tensors(bytes)?;
    let expected = spec.param_shapes()?;
    if tensors.len() != expected.len() {
        return Err(Error::Format {
            offset: 8,
            message: format!("file has {} tensors, architecture needs {}", tensors.len(), expected.len()),
        });
    }
    ModelParams::new(spec.clone(), tensors).map_err(|e| Error::Format { offset: 12, message: e.to_string() })
}

pub fn save_weights(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load_weights(path: &Path, spec: &ModelSpec) -> Result<ModelParams> {
    decode(&fs::read(path)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::init(&ModelSpec::default_mlp([4, 4, 1], 10), 5).unwrap()
    }

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.maes");
        let p = params();
        save_weights(&p, &path).unwrap();
        let back = load_weights(&path, &p.spec).unwrap();
        assert_eq!(back, p);
        assert_eq!(fs::read(&path).unwrap(), encode(&back));
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&params());
        assert_eq!(&bytes[..4], b"MAES");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 64);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let p = params();
        let bytes = encode(&p);
        let err = decode(&bytes[..bytes.len() - 3], &p.spec).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn wrong_magic_names_expected_magic() {
        let p = params();
        let mut bytes = encode(&p);
        bytes[..4].copy_from_slice(b"NOPE");
        let err = decode(&bytes, &p.spec).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(err.to_string().contains("\"MAES\""), "{err}");
    }

    #[test]
    fn wrong_version_and_shape_report_offsets() {
        let p = params();
        let mut bytes = encode(&p);
        bytes[4] = 2;
        assert!(matches!(decode(&bytes, &p.spec), Err(Error::Format { offset: 4, .. })));
        let other = ModelSpec::default_mlp([5, 5, 1], 10);
        assert!(matches!(decode(&encode(&p), &other), Err(Error::Format { .. })));
    }
}
