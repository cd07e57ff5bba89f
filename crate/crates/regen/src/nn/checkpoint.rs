//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DFG1"
//! version u32          (currently 1)
//! meta    u64 length + JSON bytes (topology configs, free-form)
//! count   u64          number of tensors
//! entry*  u64 name len, name bytes, u8 dtype (0 = f64),
//!         u64 ndim, u64 dims..., u64 offset (elements), u64 numel
//! payload u64 length (elements) + f64 values
//! crc     u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The loader re-derives the CRC, so truncation and bit rot surface as
//! checkpoint errors instead of silently wrong weights.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DFG1";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// CRC-32 (IEEE 802.3), table-driven.
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn make_table() -> [u32; 256] {
        let mut table = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            table[i] = c;
            i += 1;
        }
        table
    }
    const TABLE: [u32; 256] = make_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} (need {n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let meta_bytes = serde_json::to_vec(meta)?;
    put_u64(&mut buf, meta_bytes.len() as u64);
    buf.extend_from_slice(&meta_bytes);

    put_u64(&mut buf, params.len() as u64);
    let mut offset = 0u64;
    for (name, tensor) in params.iter() {
        put_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        put_u64(&mut buf, tensor.shape().len() as u64);
        for &d in tensor.shape() {
            put_u64(&mut buf, d as u64);
        }
        put_u64(&mut buf, offset);
        put_u64(&mut buf, tensor.numel() as u64);
        offset += tensor.numel() as u64;
    }

    put_u64(&mut buf, offset);
    for (_, tensor) in params.iter() {
        for &x in tensor.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, ParamSet)> {
    let bytes = fs::read(path).map_err(|e|

        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingCheckpoint(path.display().to_string())
        } else {
            Error::Io(e)
        }
    )?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("file too small to be a checkpoint".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?} (expected {MAGIC:?})"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (this build reads {VERSION})"
        )));
    }

    let meta_len = r.u64("meta length")? as usize;
    let meta_bytes = r.take(meta_len, "meta")?;
    let meta: serde_json::Value = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::Checkpoint(format!("meta is not valid JSON: {e}")))?;

    let count = r.u64("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u64("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?}: unsupported dtype {dtype}"
            )));
        }
        let ndim = r.u64("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dim")? as usize);
        }
        let offset = r.u64("offset")? as usize;
        let numel = r.u64("numel")? as usize;
        if shape.iter().product::<usize>() != numel {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?}: shape {shape:?} does not describe {numel} elements"
            )));
        }
        manifest.push((name, shape, offset, numel));
    }

    let payload_len = r.u64("payload length")? as usize;
    let payload_bytes = r.take(payload_len * 8, "payload")?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            body.len() - r.pos
        )));
    }

    let mut params = ParamSet::new();
    for (name, shape, offset, numel) in manifest {
        if offset + numel > payload_len {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?}: payload range {offset}+{numel} exceeds {payload_len}"
            )));
        }
        let data: Vec<f64> = payload_bytes[offset * 8..(offset + numel) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::from_vec(data, &shape)?);
    }
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_params() -> ParamSet {
        let mut rng = crate::testutil::rng(81);
        let mut p = ParamSet::new();
        p.insert(
            "enc.w",
            Tensor::from_vec(crate::testutil::noise(&mut rng, 12), &[3, 4]).unwrap(),
        );
        p.insert(
            "enc.b",
            Tensor::from_vec(crate::testutil::noise(&mut rng, 3), &[3]).unwrap(),
        );
        p.insert("head.scale", Tensor::scalar(0.125));
        p
    }

    #[test]
    fn crc32_known_vectors() {
        // Standard IEEE test vector.
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(b"a"), 0xE8B7BE43);
    }

    #[test]
    fn round_trip_is_bit_exact_and_order_preserving() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = sample_params();
        let meta = json!({"topology": {"kind": "test", "layers": 3}, "seed": 42});
        save_checkpoint(&path, &meta, &params).unwrap();

        let (meta2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(params.len(), params2.len());
        for ((n1, t1), (n2, t2)) in params.iter().zip(params2.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &json!({}), &sample_params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("CRC"), "{msg}"),
            other => panic!("expected CRC error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &json!({}), &sample_params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &json!({}), &sample_params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"NOPE");
        // Re-seal the CRC so only the magic is wrong.
        let n = bytes.len();
        let crc = crc32(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &json!({}), &sample_params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_maps_to_missing_checkpoint() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/nowhere.ckpt")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn empty_param_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        save_checkpoint(&path, &json!({"empty": true}), &ParamSet::new()).unwrap();
        let (meta, params) = load_checkpoint(&path).unwrap();
        assert_eq!(meta["empty"], json!(true));
        assert!(params.is_empty());
    }
}
