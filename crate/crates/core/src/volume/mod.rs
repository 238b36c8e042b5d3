//! Dense voxel grids: CT volumes, binary masks and instance label maps.
//!
//! All grids share the same layout: `x` varies fastest and `z` slowest, so
//! the linear index of voxel `(x, y, z)` is `x + nx * (y + ny * z)`.

mod components;
mod morphology;
mod nifti;
mod rvol;
mod segment;

pub use components::{connected_components, Connectivity};
pub use morphology::{dilate, erode, morph, MorphMode, Shape, StructuringElement};
pub use nifti::{export_nifti, import_nifti};
pub use rvol::{
    read_label_map, read_mask, read_volume, write_label_map, write_mask, write_volume, RVOL_MAGIC,
    RVOL_VERSION,
};
pub use segment::{
    reconstruct, remove_exterior, remove_exterior_with, separate_ribs_from_vertebra,
    separate_ribs_from_vertebra_with, BodyConfig, SeparationConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bone threshold in Hounsfield units.
pub const BONE_THRESHOLD_HU: i16 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let rest = index / self.nx;
        [x, rest % self.ny, rest / self.ny]
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.nx
            && (y as usize) < self.ny
            && (z as usize) < self.nz
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// A dense 3D grid with physical voxel spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<T>,
}

/// CT intensities in Hounsfield units.
pub type Volume = Grid<i16>;
/// One boolean per voxel.
pub type BinaryMask = Grid<bool>;
/// Instance labels: 0 is background, `1..=K` are instances.
pub type LabelMap = Grid<u32>;

fn check_spacing(spacing: [f32; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("spacing must be finite and positive, got {spacing:?}")))
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(dims: Dims, spacing: [f32; 3], value: T) -> Result<Self> {
        check_spacing(spacing)?;
        if dims.is_empty() {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims}")));
        }
        Ok(Grid {
            dims,
            spacing,
            data: vec![value; dims.len()],
        })
    }
}

impl<T> Grid<T> {
    pub fn from_vec(dims: Dims, spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        check_spacing(spacing)?;
        if dims.is_empty() {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "data length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(Grid { dims, spacing, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    /// Builds a grid of the same geometry from a per-voxel function.
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_geometry<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn ensure_same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.dims == other.dims {
            Ok(())
        } else {
            Err(Error::DimMismatch(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )))
        }
    }

    /// Center of voxel `index` in millimeters.
    pub fn voxel_center(&self, index: usize) -> [f64; 3] {
        let c = self.dims.coords(index);
        [
            (c[0] as f64 + 0.5) * self.spacing[0] as f64,
            (c[1] as f64 + 0.5) * self.spacing[1] as f64,
            (c[2] as f64 + 0.5) * self.spacing[2] as f64,
        ]
    }
}

impl<T: Clone> Grid<T> {
    /// Keeps slices `z >= nz / 2`, the superior half under this crate's
    /// orientation convention (z increases towards the head).
    pub fn crop_upper_half(&self) -> Result<Self> {
        if self.dims.nz < 2 {
            return Err(Error::invalid("crop_upper_half needs at least two slices"));
        }
        let z0 = self.dims.nz / 2;
        let slice = self.dims.nx * self.dims.ny;
        let dims = Dims::new(self.dims.nx, self.dims.ny, self.dims.nz - z0);
        Ok(Grid {
            dims,
            spacing: self.spacing,
            data: self.data[z0 * slice..].to_vec(),
        })
    }
}

impl Grid<bool> {
    pub fn empty_like<U>(other: &Grid<U>) -> Self {
        Grid {
            dims: other.dims,
            spacing: other.spacing,
            data: vec![false; other.dims.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Linear indices of foreground voxels in ascending order.
    pub fn foreground(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    pub fn complement(&self) -> Self {
        self.map(|b| !b)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.ensure_same_dims(other, "union")?;
        Ok(self.zip_with(other, |a, b| a || b))
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.ensure_same_dims(other, "difference")?;
        Ok(self.zip_with(other, |a, b| a && !b))
    }

    /// True when every foreground voxel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Grid<u32> {
    /// Number of instances `K` (the largest label).
    pub fn num_instances(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Foreground mask of every nonzero label.
    pub fn any_label(&self) -> BinaryMask {
        self.map(|l| *l != 0)
    }

    pub fn instance_mask(&self, label: u32) -> BinaryMask {
        self.map(|l| *l == label)
    }

    /// Voxel count per label, indexed by label (entry 0 is background).
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_instances() as usize + 1];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Foreground iff `HU >= threshold`.
pub fn binarize(v: &Volume, threshold: i16) -> BinaryMask {
    v.map(|hu| *hu >= threshold)
}

/// Voxelwise AND of two masks with identical dims.
pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.ensure_same_dims(b, "intersect")?;
    Ok(a.zip_with(b, |x, y| x && y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_boundary_is_inclusive() {
        let v = Volume::from_vec(Dims::new(3, 1, 1), [1.0; 3], vec![200, 199, -1000]).unwrap();
        let m = binarize(&v, BONE_THRESHOLD_HU);
        assert_eq!(m.data(), &[true, false, false]);
    }

    #[test]
    fn all_air_binarizes_empty() {
        let v = Volume::filled(Dims::new(4, 4, 4), [1.0; 3], -1000).unwrap();
        assert!(binarize(&v, 200).is_clear());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::from_vec(Dims::new(2, 2, 2), [1.0; 3], vec![0; 7]).is_err());
        assert!(Volume::filled(Dims::new(2, 2, 2), [1.0, 0.0, 1.0], 0).is_err());
        assert!(Volume::filled(Dims::new(2, 2, 2), [1.0, f32::NAN, 1.0], 0).is_err());
    }

    #[test]
    fn intersect_identities() {
        let a = BinaryMask::from_vec(Dims::new(2, 2, 1), [1.0; 3], vec![true, false, true, true])
            .unwrap();
        let empty = BinaryMask::empty_like(&a);
        assert_eq!(intersect(&a, &a).unwrap(), a);
        assert_eq!(intersect(&a, &empty).unwrap(), empty);
        let other = BinaryMask::filled(Dims::new(2, 1, 1), [1.0; 3], true).unwrap();
        assert!(matches!(intersect(&a, &other), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn crop_keeps_top_slices() {
        let data: Vec<i16> = (0..16).collect();
        let v = Volume::from_vec(Dims::new(2, 2, 4), [1.0; 3], data).unwrap();
        let c = v.crop_upper_half().unwrap();
        assert_eq!(c.dims(), Dims::new(2, 2, 2));
        assert_eq!(c.data(), &[8, 9, 10, 11, 12, 13, 14, 15]);
        let q = c.crop_upper_half().unwrap();
        assert_eq!(q.dims().nz, 1);
        assert_eq!(q.data(), &[12, 13, 14, 15]);
        assert!(q.crop_upper_half().is_err());
    }

    proptest! {
        #[test]
        fn intersect_matches_elementwise_loop(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 27)) {
            let a = BinaryMask::from_vec(Dims::new(3, 3, 3), [1.0; 3], bits.iter().map(|p| p.0).collect()).unwrap();
            let b = BinaryMask::from_vec(Dims::new(3, 3, 3), [1.0; 3], bits.iter().map(|p| p.1).collect()).unwrap();
            let c = intersect(&a, &b).unwrap();
            for (i, (x, y)) in bits.iter().enumerate() {
                prop_assert_eq!(c.data()[i], *x && *y);
            }
        }

        #[test]
        fn index_coords_round_trip(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9, seed in any::<usize>()) {
            let d = Dims::new(nx, ny, nz);
            let i = seed % d.len();
            let [x, y, z] = d.coords(i);
            prop_assert_eq!(d.index(x, y, z), i);
        }
    }
}
