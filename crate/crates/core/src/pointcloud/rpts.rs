//! `RPTS` point-set files: magic `RPTS`, u16 version, u64 count, f32 xyz
//! interleaved, u8 label-presence flag, then one u8 label per point when the
//! flag is 1. Little-endian. Voxel indices are not stored; points read
//! back map to voxels through their coordinates.

use std::path::Path;

use super::PointSet;
use crate::error::{Error, Result};

pub const RPTS_MAGIC: &[u8; 4] = b"RPTS";
pub const RPTS_VERSION: u16 = 1;

pub fn encode_points(p: &PointSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(15 + 12 * p.len() + p.len());
    out.extend_from_slice(RPTS_MAGIC);
    out.extend_from_slice(&RPTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for c in &p.coords {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &p.labels {
        Some(labels) => {
            out.push(1);
            out.extend_from_slice(labels);
        }
        None => out.push(0),
    }
    out
}

pub fn decode_points(bytes: &[u8]) -> Result<PointSet> {
    if bytes.len() < 14 {
        return Err(Error::format(bytes.len() as u64, "truncated RPTS header"));
    }
    if &bytes[..4] != RPTS_MAGIC {
        return Err(Error::format(0, "bad RPTS magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RPTS_VERSION {
        return Err(Error::Unsupported(format!("RPTS version {version}")));
    }
    let count = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let coord_end = count
        .checked_mul(12)
        .and_then(|n| n.checked_add(14))
        .ok_or_else(|| Error::format(6, "RPTS count overflow"))?;
    if bytes.len() < coord_end + 1 {
        return Err(Error::format(bytes.len() as u64, "truncated RPTS coordinates"));
    }
    let coords = bytes[14..coord_end]
        .chunks_exact(12)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap())))
        .collect();
    let labels = match bytes[coord_end] {
        0 if bytes.len() == coord_end + 1 => None,
        1 if bytes.len() == coord_end + 1 + count => Some(bytes[coord_end + 1..].to_vec()),
        0 | 1 => return Err(Error::format(coord_end as u64, "RPTS label block length mismatch")),
        flag => return Err(Error::format(coord_end as u64, format!("bad RPTS label flag {flag}"))),
    };
    let p = PointSet {
        coords,
        labels,
        voxel_index: None,
    };
    p.validate()?;
    Ok(p)
}

pub fn write_points(path: impl AsRef<Path>, p: &PointSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_points(p)).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_points(&bytes)
}
