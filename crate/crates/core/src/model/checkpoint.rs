//! Named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TE2SL" 0x01                 magic + format version
//! u32                          tensor count
//! per tensor:
//!   u16 name length, UTF-8 name
//!   u8 rank, rank × u32 dims
//!   product(dims) × f64 payload
//! u64                          FNV-1a of every preceding byte
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fnv::fnv1a;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"TE2SL";
pub const VERSION: u8 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let count = u32::try_from(tensors.len()).map_err(|_| Error::format("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::format(format!("duplicate tensor name `{name}`")));
        }
        let len = u16::try_from(name.len()).map_err(|_| Error::format("tensor name too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::format("tensor rank too large"))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::format("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 1 {
        return Err(Error::format("truncated checkpoint"));
    }
    let version = bytes[MAGIC.len()];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < MAGIC.len() + 1 + 4 + 8 {
        return Err(Error::format("truncated checkpoint"));
    }
    let body = &bytes[..bytes.len() - 8];
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len() + 1,
    };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(format!("duplicate tensor name `{name}`")));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor size overflows"))?;
        if n > (body.len() - r.pos) / 8 {
            return Err(Error::format("truncated checkpoint"));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        out.push((name, Tensor::from_raw(shape, data)));
    }
    if r.pos != body.len() {
        return Err(Error::format("trailing bytes after the last tensor"));
    }
    // Structure first so truncation reports as a format error; payload
    // corruption then surfaces here.
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NamedTensors> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        vec![
            ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -0.0, 3.5, 1e-300]).unwrap()),
            ("bias".into(), Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap()),
            ("empty".into(), Tensor::zeros(&[0, 4])),
        ]
    }

    #[test]
    fn round_trip_bit_identical() {
        let bytes = encode(&sample()).unwrap();
        let back = decode(&bytes).unwrap();
        for ((n1, t1), (n2, t2)) in sample().iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn flipped_payload_byte_is_checksum_error() {
        let mut bytes = encode(&sample()).unwrap();
        let i = bytes.len() - 20;
        bytes[i] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn distinct_errors_for_magic_version_truncation() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[5] = 2;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedVersion(2))));
        assert!(decode(&bytes[..3]).is_err());
        for cut in [6, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::zeros(&[1]);
        assert!(encode(&[("x".into(), t.clone()), ("x".into(), t)]).is_err());
    }
}
