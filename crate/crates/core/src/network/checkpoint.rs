//! "RCKP" checkpoints.
//!
//! Layout, little-endian: magic `RCKP`, u16 version, u64 length + canonical
//! JSON header (sorted keys), u32 tensor count, then per tensor a u16 length +
//! UTF-8 name, u8 rank, u64 dims and the f32 payload, then a u8 flag for the
//! optimizer block (u64 step, first then second moments per tensor), and a
//! CRC32 of everything before it.

use std::path::Path;

use serde_json::Value;

use super::model::{ModelParams, NetworkConfig};
use super::optim::AdamState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const RCKP_MAGIC: &[u8; 4] = b"RCKP";
pub const RCKP_VERSION: u16 = 1;
/// Coordinate convention the network expects, recorded in every header.
pub const NORMALIZATION: &str = "centroid_unit_ball";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Free-form header fields other than the network config.
    pub metadata: Value,
}

fn canonical(v: &Value) -> Result<Vec<u8>> {
    // serde_json's default map is ordered by key
    let sorted: Value = serde_json::from_str(&serde_json::to_string(v)?)?;
    Ok(serde_json::to_vec(&sorted)?)
}

pub fn encode_checkpoint(params: &ModelParams, metadata: &Value) -> Result<Vec<u8>> {
    params.validate()?;
    let header = serde_json::json!({
        "network": params.config,
        "normalization": NORMALIZATION,
        "metadata": metadata,
    });
    let json = canonical(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(RCKP_MAGIC);
    out.extend_from_slice(&RCKP_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &params.optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(1);
            out.extend_from_slice(&opt.step.to_le_bytes());
            for buf in opt.m.iter().chain(&opt.v) {
                for v in buf {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated checkpoint, need {n} more bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let at = self.pos as u64;
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(Error::format(at, format!("length {n} exceeds the remaining {limit} bytes")));
        }
        Ok(n as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.pos as u64, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 + 2 + 8 + 4 + 1 + 4 {
        return Err(Error::format(0, "file too short for a checkpoint"));
    }
    if &bytes[..4] != RCKP_MAGIC {
        return Err(Error::format(0, "bad magic, expected RCKP"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Integrity(format!("checkpoint CRC32 {actual:08x} does not match stored {stored:08x}")));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != RCKP_VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let jlen = r.len(body.len())?;
    let header: Value = serde_json::from_slice(r.take(jlen)?)?;
    let norm = header.get("normalization").and_then(Value::as_str);
    if norm != Some(NORMALIZATION) {
        return Err(Error::Unsupported(format!("checkpoint normalization {norm:?}")));
    }
    let config: NetworkConfig = serde_json::from_value(
        header
            .get("network")
            .cloned()
            .ok_or_else(|| Error::format(14, "header has no network config"))?,
    )?;
    let count = r.u32()? as usize;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let at = r.pos as u64;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.len(body.len()))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format(r.pos as u64, "tensor size overflow"))?;
        let data = r.f32s(n)?;
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    if names.iter().enumerate().any(|(i, n)| names[..i].contains(n)) {
        return Err(Error::format(0, "duplicate tensor names"));
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m = tensors.iter().map(|t| r.f32s(t.len())).collect::<Result<Vec<_>>>()?;
            let v = tensors.iter().map(|t| r.f32s(t.len())).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, m, v })
        }
        f => return Err(Error::format(r.pos as u64 - 1, format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes before CRC"));
    }
    let params = ModelParams {
        config,
        names,
        tensors,
        optimizer,
    };
    params.validate()?;
    Ok(Checkpoint {
        params,
        metadata: header.get("metadata").cloned().unwrap_or(Value::Null),
    })
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, metadata: &Value) -> Result<()> {
    let bytes = encode_checkpoint(params, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::NetworkConfig;

    fn params() -> ModelParams {
        let mut p = ModelParams::init(&NetworkConfig::compact()).unwrap();
        let mut opt = AdamState::new(&p.tensors);
        opt.step = 3;
        opt.m[0][0] = 0.25;
        p.optimizer = Some(opt);
        p
    }

    #[test]
    fn round_trip_and_stable_bytes() {
        let p = params();
        let meta = serde_json::json!({"z": 1, "a": [1, 2]});
        let a = encode_checkpoint(&p, &meta).unwrap();
        let b = encode_checkpoint(&p, &meta).unwrap();
        assert_eq!(a, b);
        let back = decode_checkpoint(&a).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.metadata, meta);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode_checkpoint(&params(), &Value::Null).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Integrity(_))));
        let mut bad = encode_checkpoint(&params(), &Value::Null).unwrap();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
    }
}
