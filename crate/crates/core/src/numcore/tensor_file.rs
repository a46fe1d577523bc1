//! Named-tensor container used for checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic       8 bytes  "PRSTCKPT"
//! version     u16      1
//! meta_len    u32      length of the metadata blob
//! meta        bytes    UTF-8 (JSON) describing the model
//! count       u32      number of tensors
//! manifest    count x { name_len u16, name UTF-8, ndim u8, dims u32 x ndim, offset u64 }
//! payload     f32 x sum(dims)   offsets are in bytes from the start of the payload
//! ```

use std::io::{Read, Write};

use crate::error::FormatError;

use super::Tensor;

pub const MAGIC: &[u8; 8] = b"PRSTCKPT";
pub const VERSION: u16 = 1;

/// In-memory image of a tensor file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl TensorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset: u64 = 0;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic { expected: *MAGIC, found: magic.to_vec() });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { found: version, supported: VERSION });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| FormatError::Corrupt("metadata is not UTF-8".into()))?
            .to_string();
        let count = r.u32("tensor count")? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let what = "manifest entry";
            let name_len = r.u16(what)? as usize;
            let name = std::str::from_utf8(r.take(name_len, what)?)
                .map_err(|_| FormatError::Corrupt(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let ndim = r.take(1, what)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32(what)? as usize);
            }
            let offset = r.u64(what)?;
            manifest.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(manifest.len());
        let mut expected_offset = 0u64;
        for (i, (name, shape, offset)) in manifest.into_iter().enumerate() {
            if offset != expected_offset {
                return Err(FormatError::Corrupt(format!("tensor {name:?} has offset {offset}, expected {expected_offset}")));
            }
            let n: usize = shape.iter().product();
            let start = offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(FormatError::Truncated { record: i as u64 });
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| FormatError::Corrupt(format!("tensor {name:?}: {e}")))?;
            tensors.push((name, t));
            expected_offset = end as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(FormatError::Corrupt(format!(
                "{} trailing bytes after payload",
                payload.len() - expected_offset as usize
            )));
        }
        Ok(TensorFile { meta, tensors })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FormatError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Cursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::TruncatedHeader(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
    pub fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile {
        TensorFile {
            meta: "{\"k\":1}".into(),
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE]).unwrap()),
                ("b.bias".into(), Tensor::new(vec![3], vec![0.0, 1e-30, -0.0]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensors[1].1.data()[2].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = sample().to_bytes();
        let e = TensorFile::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(e, FormatError::Truncated { record: 1 }), "{e:?}");
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn version_checked() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(FormatError::UnsupportedVersion { found: 9, .. })));
    }
}
