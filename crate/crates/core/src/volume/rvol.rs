//! Native `RVOL` container.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `RVOL` |
//! | 2 | u16 version (1) |
//! | 12 | u32 nx, ny, nz |
//! | 12 | f32 spacing x, y, z |
//! | 2·n | voxel payload |
//!
//! Volumes store i16 HU values. Label maps store u16 labels and masks store
//! 0/1 in the same two-byte slots; the reader chosen decides the
//! interpretation.

use std::path::Path;

use super::{BinaryMask, Dims, Grid, LabelMap, Volume};
use crate::error::{Error, Result};

pub const RVOL_MAGIC: &[u8; 4] = b"RVOL";
pub const RVOL_VERSION: u16 = 1;
const HEADER_LEN: usize = 30;

fn encode(dims: Dims, spacing: [f32; 3], payload: impl Iterator<Item = [u8; 2]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * dims.len());
    out.extend_from_slice(RVOL_MAGIC);
    out.extend_from_slice(&RVOL_VERSION.to_le_bytes());
    for d in dims.as_array() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v);
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Dims, [f32; 3], &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated RVOL header"));
    }
    if &bytes[0..4] != RVOL_MAGIC {
        return Err(Error::format(0, "bad RVOL magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RVOL_VERSION {
        return Err(Error::Unsupported(format!("RVOL version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dims = Dims::new(u32_at(6), u32_at(10), u32_at(14));
    if dims.is_empty() {
        return Err(Error::format(6, format!("RVOL dims must be positive, got {dims}")));
    }
    let spacing = [f32_at(18), f32_at(22), f32_at(26)];
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::format(18, format!("invalid RVOL spacing {spacing:?}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = dims
        .len()
        .checked_mul(2)
        .ok_or_else(|| Error::format(6, "RVOL dims overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            HEADER_LEN as u64,
            format!("RVOL payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    Ok((dims, spacing, payload))
}

fn read_grid<T>(path: &Path, convert: impl Fn([u8; 2]) -> Result<T>) -> Result<Grid<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, spacing, payload) = decode(&bytes)?;
    let data = payload
        .chunks_exact(2)
        .map(|c| convert([c[0], c[1]]))
        .collect::<Result<Vec<T>>>()?;
    Grid::from_vec(dims, spacing, data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    encode(v.dims(), v.spacing(), v.data().iter().map(|x| x.to_le_bytes()))
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(v))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read_grid(path.as_ref(), |b| Ok(i16::from_le_bytes(b)))
}

pub fn write_mask(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    let bytes = encode(m.dims(), m.spacing(), m.data().iter().map(|b| (*b as i16).to_le_bytes()));
    write_bytes(path.as_ref(), &bytes)
}

/// Reads a mask; any nonzero voxel is foreground, so label maps load as
/// their union.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    read_grid(path.as_ref(), |b| Ok(u16::from_le_bytes(b) != 0))
}

pub fn write_label_map(path: impl AsRef<Path>, l: &LabelMap) -> Result<()> {
    if let Some(bad) = l.data().iter().find(|v| **v > u16::MAX as u32) {
        return Err(Error::invalid(format!("label {bad} does not fit the u16 RVOL payload")));
    }
    let bytes = encode(l.dims(), l.spacing(), l.data().iter().map(|v| (*v as u16).to_le_bytes()));
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    read_grid(path.as_ref(), |b| Ok(u16::from_le_bytes(b) as u32))
}
