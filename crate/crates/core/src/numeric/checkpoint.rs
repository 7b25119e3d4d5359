//! Flat binary parameter checkpoint.
//!
//! Layout (little-endian): magic `GCT1`, `u32` parameter count, then per
//! parameter `u32` name length, UTF-8 name, `u32` rank, `u64` dims, and the
//! row-major `f64` data. A trailing SHA-256 digest of all preceding bytes
//! guards against corruption.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCT1";
const DIGEST_LEN: usize = 32;

pub fn encode(params: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "missing GCT1 header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let mut cur = Cursor { bytes: body, pos: 4 };
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::format("checkpoint", e.to_string()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::format("checkpoint", "overflow"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if cur.pos != body.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(out)
}

pub fn save(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("a.weight".into(), Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.25)),
            (
                "a.bias".into(),
                Tensor::new(&[3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap(),
            ),
            ("scalar".into(), Tensor::scalar(std::f64::consts::PI)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = sample();
        let bytes = encode(&params);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), params.len());
        for ((n0, t0), (n1, t1)) in params.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            let b0: Vec<u64> = t0.data().iter().map(|v| v.to_bits()).collect();
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b0, b1);
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn flipped_byte_is_a_checksum_mismatch() {
        let mut bytes = encode(&sample());
        bytes[20] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::ChecksumMismatch)));
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"GCT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(&bytes[12..20], b"a.weight");
    }
}
