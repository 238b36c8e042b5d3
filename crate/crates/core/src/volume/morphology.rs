//! Binary dilation and erosion with ball or cube structuring elements.
//!
//! Distances are measured in voxel units; anisotropic spacing is ignored.
//! Voxels outside the grid count as background for both operations.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ball,
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub radius: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphMode {
    Dilate,
    Erode,
}

impl StructuringElement {
    pub const fn ball(radius: usize) -> Self {
        StructuringElement {
            radius,
            shape: Shape::Ball,
        }
    }

    pub const fn cube(radius: usize) -> Self {
        StructuringElement {
            radius,
            shape: Shape::Cube,
        }
    }

    /// Offsets covered by the element, including the origin.
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let r = self.radius as i64;
        let mut out = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let inside = match self.shape {
                        Shape::Cube => true,
                        Shape::Ball => dx * dx + dy * dy + dz * dz <= r * r,
                    };
                    if inside {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

struct OffsetTable {
    offsets: Vec<[i64; 3]>,
    linear: Vec<isize>,
    radius: usize,
}

impl OffsetTable {
    fn new(dims: Dims, se: &StructuringElement) -> Self {
        let offsets = se.offsets();
        let linear = offsets
            .iter()
            .map(|o| (o[0] + dims.nx as i64 * (o[1] + dims.ny as i64 * o[2])) as isize)
            .collect();
        OffsetTable {
            offsets,
            linear,
            radius: se.radius,
        }
    }

    /// Whether every offset from `c` stays inside the grid.
    #[inline]
    fn interior(&self, dims: Dims, c: [usize; 3]) -> bool {
        let r = self.radius;
        c[0] >= r
            && c[1] >= r
            && c[2] >= r
            && c[0] + r < dims.nx
            && c[1] + r < dims.ny
            && c[2] + r < dims.nz
    }
}

pub fn morph(m: &BinaryMask, se: &StructuringElement, mode: MorphMode) -> BinaryMask {
    match mode {
        MorphMode::Dilate => dilate(m, se),
        MorphMode::Erode => erode(m, se),
    }
}

/// Cost is proportional to foreground size times element size, so sparse
/// masks dilate quickly regardless of the grid size.
pub fn dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    if se.radius == 0 {
        return m.clone();
    }
    let dims = m.dims();
    let table = OffsetTable::new(dims, se);
    let src = m.data();
    let mut out = m.clone();
    let dst = out.data_mut();
    for (i, &fg) in src.iter().enumerate() {
        if !fg {
            continue;
        }
        let c = dims.coords(i);
        if table.interior(dims, c) {
            for &d in &table.linear {
                dst[(i as isize + d) as usize] = true;
            }
        } else {
            for o in &table.offsets {
                let (x, y, z) = (c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]);
                if dims.contains(x, y, z) {
                    dst[dims.index(x as usize, y as usize, z as usize)] = true;
                }
            }
        }
    }
    out
}

pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    if se.radius == 0 {
        return m.clone();
    }
    let dims = m.dims();
    let table = OffsetTable::new(dims, se);
    let src = m.data();
    let mut out = BinaryMask::empty_like(m);
    let dst = out.data_mut();
    for (i, &fg) in src.iter().enumerate() {
        if !fg {
            continue;
        }
        let c = dims.coords(i);
        // Elements touching the border see background outside the grid.
        if !table.interior(dims, c) {
            continue;
        }
        dst[i] = table.linear.iter().all(|&d| src[(i as isize + d) as usize]);
    }
    out
}
