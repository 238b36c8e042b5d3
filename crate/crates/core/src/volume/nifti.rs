//! Minimal NIfTI-1 reader and writer.
//!
//! Supports little-endian single-file (`n+1`) images with int16 or float32
//! voxels, optional gzip compression, and `scl_slope`/`scl_inter` scaling.
//! Only axis-aligned orientations are accepted.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Dims, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: i32 = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_QUATERN_B: usize = 256;
const OFF_SROW_X: usize = 280;
const OFF_MAGIC: usize = 344;

struct Header<'a> {
    bytes: &'a [u8],
}

impl Header<'_> {
    fn i16(&self, o: usize) -> i16 {
        i16::from_le_bytes([self.bytes[o], self.bytes[o + 1]])
    }
    fn i32(&self, o: usize) -> i32 {
        i32::from_le_bytes(self.bytes[o..o + 4].try_into().unwrap())
    }
    fn f32(&self, o: usize) -> f32 {
        f32::from_le_bytes(self.bytes[o..o + 4].try_into().unwrap())
    }
}

fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn check_orientation(h: &Header) -> Result<()> {
    const TOL: f32 = 1e-4;
    let sform = h.i16(OFF_SFORM_CODE);
    let qform = h.i16(OFF_QFORM_CODE);
    let matrix: [[f32; 3]; 3] = if sform > 0 {
        let row = |r: usize| {
            let o = OFF_SROW_X + 16 * r;
            [h.f32(o), h.f32(o + 4), h.f32(o + 8)]
        };
        [row(0), row(1), row(2)]
    } else if qform > 0 {
        let (b, c, d) = (h.f32(OFF_QUATERN_B), h.f32(OFF_QUATERN_B + 4), h.f32(OFF_QUATERN_B + 8));
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    } else {
        return Ok(());
    };
    for (r, row) in matrix.iter().enumerate() {
        let scale = row.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
        for (c, v) in row.iter().enumerate() {
            if r != c && v.abs() > TOL * scale {
                return Err(Error::Unsupported(
                    "oblique or permuted NIfTI orientation".to_string(),
                ));
            }
        }
    }
    Ok(())
}

pub fn import_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = load_bytes(path)?;
    if bytes.len() < HEADER_SIZE as usize {
        return Err(Error::format(bytes.len() as u64, "file shorter than a NIfTI-1 header"));
    }
    let h = Header { bytes: &bytes };
    let sizeof_hdr = h.i32(0);
    if sizeof_hdr != HEADER_SIZE {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE {
            return Err(Error::Unsupported("big-endian NIfTI".to_string()));
        }
        return Err(Error::format(0, format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(Error::Unsupported("two-file (.hdr/.img) NIfTI".to_string()));
    }
    if magic != b"n+1\0" {
        return Err(Error::format(OFF_MAGIC as u64, "bad NIfTI magic"));
    }
    let dim: Vec<i16> = (0..8).map(|i| h.i16(OFF_DIM + 2 * i)).collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) || dim[4..=ndim as usize].iter().any(|&d| d != 1) {
        return Err(Error::Unsupported(format!("NIfTI with dim {dim:?}; only 3D volumes")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::format(OFF_DIM as u64, format!("non-positive dims {dim:?}")));
    }
    let dims = Dims::new(dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let spacing = [h.f32(OFF_PIXDIM + 4), h.f32(OFF_PIXDIM + 8), h.f32(OFF_PIXDIM + 12)]
        .map(f32::abs);
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::format(OFF_PIXDIM as u64, format!("invalid pixdim {spacing:?}")));
    }
    check_orientation(&h)?;

    let datatype = h.i16(OFF_DATATYPE);
    let bytes_per = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(Error::Unsupported(format!("NIfTI datatype code {other}")));
        }
    };
    let bitpix = h.i16(OFF_BITPIX);
    if bitpix as usize != 8 * bytes_per {
        return Err(Error::format(
            OFF_BITPIX as u64,
            format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }
    let vox_offset = h.f32(OFF_VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::format(OFF_VOX_OFFSET as u64, format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let needed = dims.len() * bytes_per;
    if bytes.len() < start + needed {
        return Err(Error::format(
            bytes.len() as u64,
            format!("voxel data truncated: need {needed} bytes from offset {start}"),
        ));
    }
    let payload = &bytes[start..start + needed];

    let slope = h.f32(OFF_SCL_SLOPE);
    let inter = h.f32(OFF_SCL_INTER);
    let scaled = slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    let (slope, inter) = if scaled {
        (slope as f64, if inter.is_finite() { inter as f64 } else { 0.0 })
    } else {
        (1.0, 0.0)
    };
    let to_hu = |v: f64| -> i16 {
        // `as` saturates out-of-range values at the i16 bounds.
        (v * slope + inter).round() as i16
    };
    let data: Vec<i16> = match datatype {
        DT_INT16 if !scaled => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| to_hu(i16::from_le_bytes([c[0], c[1]]) as f64))
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(to_hu(v as f64))
                } else {
                    Err(Error::format(start as u64, "non-finite float voxel"))
                }
            })
            .collect::<Result<_>>()?,
    };
    Volume::from_vec(dims, spacing, data)
}

fn header_bytes(v: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    let put_i16 = |h: &mut Vec<u8>, o: usize, x: i16| h[o..o + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, o: usize, x: f32| h[o..o + 4].copy_from_slice(&x.to_le_bytes());
    h[0..4].copy_from_slice(&HEADER_SIZE.to_le_bytes());
    let d = v.dims();
    for (i, x) in [3, d.nx as i16, d.ny as i16, d.nz as i16, 1, 1, 1, 1].into_iter().enumerate() {
        put_i16(&mut h, OFF_DIM + 2 * i, x);
    }
    put_i16(&mut h, OFF_DATATYPE, DT_INT16);
    put_i16(&mut h, OFF_BITPIX, 16);
    let s = v.spacing();
    for (i, x) in [1.0, s[0], s[1], s[2], 1.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        put_f32(&mut h, OFF_PIXDIM + 4 * i, x);
    }
    put_f32(&mut h, OFF_VOX_OFFSET, 352.0);
    put_f32(&mut h, OFF_SCL_SLOPE, 1.0);
    h[123] = 2; // xyzt_units: millimeters
    put_i16(&mut h, OFF_SFORM_CODE, 1);
    for (r, &sr) in s.iter().enumerate() {
        put_f32(&mut h, OFF_SROW_X + 16 * r + 4 * r, sr);
    }
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

/// Writes an int16 NIfTI-1 file; paths ending in `.gz` are gzip-compressed.
pub fn export_nifti(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    if v.dims().as_array().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::invalid(format!("dims {} exceed the NIfTI-1 limit", v.dims())));
    }
    let mut bytes = header_bytes(v);
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let gz = path.extension().is_some_and(|e| e == "gz");
    if gz {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
        Ok(())
    } else {
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume {
        let dims = Dims::new(8, 8, 4);
        let data = (0..dims.len()).map(|i| i as i16 * 3 - 100).collect();
        Volume::from_vec(dims, [1.0, 1.0, 1.0], data).unwrap()
    }

    #[test]
    fn writer_output_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["ramp.nii", "ramp.nii.gz"] {
            let p = dir.path().join(name);
            export_nifti(&p, &ramp()).unwrap();
            let v = import_nifti(&p).unwrap();
            assert_eq!(v, ramp(), "{name}");
        }
    }

    fn patched(edit: impl FnOnce(&mut Vec<u8>)) -> Result<Volume> {
        let mut bytes = header_bytes(&ramp());
        for x in ramp().data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        edit(&mut bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.nii");
        std::fs::write(&p, bytes).unwrap();
        import_nifti(&p)
    }

    #[test]
    fn bad_magic_is_format_error() {
        let r = patched(|b| b[OFF_MAGIC] = b'x');
        assert!(matches!(r, Err(Error::Format { offset, .. }) if offset == OFF_MAGIC as u64));
        let r = patched(|b| b[0] = 0);
        assert!(matches!(r, Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn unsupported_datatype_is_explicit() {
        let r = patched(|b| b[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&2i16.to_le_bytes()));
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn oblique_orientation_rejected() {
        let r = patched(|b| {
            b[OFF_SROW_X + 4..OFF_SROW_X + 8].copy_from_slice(&0.5f32.to_le_bytes());
        });
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn scaling_applied_to_float_data() {
        let dims = Dims::new(2, 1, 1);
        let v = Volume::from_vec(dims, [1.0; 3], vec![0, 0]).unwrap();
        let mut bytes = header_bytes(&v);
        bytes[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&DT_FLOAT32.to_le_bytes());
        bytes[OFF_BITPIX..OFF_BITPIX + 2].copy_from_slice(&32i16.to_le_bytes());
        bytes[OFF_SCL_SLOPE..OFF_SCL_SLOPE + 4].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[OFF_SCL_INTER..OFF_SCL_INTER + 4].copy_from_slice(&(-1024.0f32).to_le_bytes());
        for x in [100.4f32, 612.6] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.nii");
        std::fs::write(&p, bytes).unwrap();
        let back = import_nifti(&p).unwrap();
        assert_eq!(back.data(), &[-823, 201]);
    }
}
