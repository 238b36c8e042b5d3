use serde::{Deserialize, Serialize};

use super::{BinaryMask, Dims, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    #[serde(rename = "6")]
    Six,
    /// Face and edge neighbours.
    #[serde(rename = "18")]
    Eighteen,
    /// Face, edge and corner neighbours.
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            18 => Some(Connectivity::Eighteen),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    pub(crate) fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nonzero = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::Eighteen => (1..=2).contains(&nonzero),
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Labels foreground components `1..=K` in decreasing size; equal sizes are
/// ordered by their lowest voxel index.
pub fn connected_components(m: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let dims = m.dims();
    let raw = flood_labels(m, dims, connectivity);
    let mut sizes: Vec<(usize, usize, u32)> = Vec::new(); // (size, first index, raw label)
    for (i, &l) in raw.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let k = (l - 1) as usize;
        if k == sizes.len() {
            sizes.push((0, i, l));
        }
        sizes[k].0 += 1;
    }
    sizes.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remap = vec![0u32; sizes.len() + 1];
    for (rank, &(_, _, raw_label)) in sizes.iter().enumerate() {
        remap[raw_label as usize] = rank as u32 + 1;
    }
    let labels = raw.into_iter().map(|l| remap[l as usize]).collect();
    LabelMap::from_vec(dims, m.spacing(), labels).expect("geometry copied from a valid mask")
}

/// Raw labels in scan order of each component's first voxel.
fn flood_labels(m: &BinaryMask, dims: Dims, connectivity: Connectivity) -> Vec<u32> {
    let offsets = connectivity.offsets();
    let bits = m.data();
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let c = dims.coords(i);
            for o in &offsets {
                let (x, y, z) = (c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]);
                if !dims.contains(x, y, z) {
                    continue;
                }
                let j = dims.index(x as usize, y as usize, z as usize);
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_with(dims: Dims, voxels: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::filled(dims, [1.0; 3], false).unwrap();
        for v in voxels {
            m.set(v[0], v[1], v[2], true);
        }
        m
    }

    #[test]
    fn separated_voxels_are_two_components() {
        let m = mask_with(Dims::new(6, 6, 6), &[[0, 0, 0], [5, 5, 5]]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).num_instances(), 2);
    }

    #[test]
    fn face_diagonal_depends_on_connectivity() {
        let m = mask_with(Dims::new(3, 3, 3), &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(connected_components(&m, Connectivity::Six).num_instances(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).num_instances(), 1);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).num_instances(), 1);
        let corner = mask_with(Dims::new(3, 3, 3), &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(connected_components(&corner, Connectivity::Eighteen).num_instances(), 2);
        assert_eq!(connected_components(&corner, Connectivity::TwentySix).num_instances(), 1);
    }

    #[test]
    fn empty_mask_has_no_instances() {
        let m = BinaryMask::filled(Dims::new(4, 4, 4), [1.0; 3], false).unwrap();
        assert_eq!(connected_components(&m, Connectivity::TwentySix).num_instances(), 0);
    }

    #[test]
    fn labels_ordered_by_size() {
        let m = mask_with(
            Dims::new(8, 1, 1),
            &[[0, 0, 0], [3, 0, 0], [4, 0, 0], [5, 0, 0], [7, 0, 0]],
        );
        let l = connected_components(&m, Connectivity::Six);
        assert_eq!(l.data(), &[2, 0, 0, 1, 1, 1, 0, 3]);
    }

    proptest! {
        #[test]
        fn components_partition_foreground(bits in proptest::collection::vec(any::<bool>(), 64), conn in 0usize..3) {
            let c = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix][conn];
            let m = BinaryMask::from_vec(Dims::new(4, 4, 4), [1.0; 3], bits.clone()).unwrap();
            let l = connected_components(&m, c);
            for (i, b) in bits.iter().enumerate() {
                prop_assert_eq!(*b, l.data()[i] != 0);
            }
            let counts = l.label_counts();
            prop_assert!(counts[1..].iter().all(|&n| n > 0));
            prop_assert!(counts[1..].windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
