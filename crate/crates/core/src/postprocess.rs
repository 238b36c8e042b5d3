//! Point predictions back to voxels, and rib instance labeling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{NormTransform, PointSet, LABEL_RIB};
use crate::volume::{connected_components, dilate, BinaryMask, Connectivity, LabelMap, StructuringElement};

/// Default dilation applied to predicted rib points, in voxels.
pub const DEFAULT_DILATION: StructuringElement = StructuringElement::ball(2);

/// Marks the voxels of points predicted as rib, dilates by `se` and
/// intersects with the binarized mask.
///
/// Points are mapped back through their voxel index when present, otherwise
/// by inverting `t` and flooring by the mask spacing; points falling outside
/// the grid are ignored.
pub fn points_to_voxel_mask(
    points: &PointSet,
    predictions: &[u8],
    t: &NormTransform,
    binarized: &BinaryMask,
    se: &StructuringElement,
) -> Result<BinaryMask> {
    if predictions.len() != points.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions for {} points",
            predictions.len(),
            points.len()
        )));
    }
    let dims = binarized.dims();
    let mut marked = BinaryMask::empty_like(binarized);
    let positives = predictions.iter().enumerate().filter(|(_, &p)| p == LABEL_RIB).map(|(i, _)| i);
    match &points.voxel_index {
        Some(vi) => {
            if vi.len() != points.len() {
                return Err(Error::DimMismatch("voxel_index length differs from point count".into()));
            }
            for i in positives {
                let v = vi[i];
                if v >= dims.len() {
                    return Err(Error::DimMismatch(format!("voxel index {v} outside a {dims} grid")));
                }
                marked.data_mut()[v] = true;
            }
        }
        None => {
            if !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(Error::invalid("normalization scale must be positive"));
            }
            let sp = binarized.spacing();
            for i in positives {
                let mm = t.invert(points.coords[i]);
                let c: [i64; 3] = std::array::from_fn(|k| (mm[k] as f64 / sp[k] as f64).floor() as i64);
                if dims.contains(c[0], c[1], c[2]) {
                    marked.data_mut()[dims.index(c[0] as usize, c[1] as usize, c[2] as usize)] = true;
                }
            }
        }
    }
    let out = crate::volume::intersect(&dilate(&marked, se), binarized)?;
    assert!(out.is_subset_of(binarized), "voxel mask escaped the binarized mask");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibInstance {
    /// Label value in the instance map.
    pub id: u32,
    pub side: Side,
    /// 1 is the most superior rib of its side.
    pub pair_index: u32,
    pub voxels: usize,
    pub centroid_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RibLabeling {
    pub labels: LabelMap,
    pub instances: Vec<RibInstance>,
    pub warnings: Vec<String>,
}

/// Accepted instance count range; 22 is common when floating ribs are absent.
pub const EXPECTED_INSTANCES: std::ops::RangeInclusive<usize> = 20..=24;

/// Splits the rib mask at the sagittal midline (median x of rib voxels) and
/// labels the 26-connected components of each half. Instances are numbered
/// from 1, superior first, left before right within a pair. Patient left is
/// +x.
pub fn label_rib_instances(ribs: &BinaryMask) -> RibLabeling {
    let fg = ribs.foreground();
    let mut labels = LabelMap::filled(ribs.dims(), ribs.spacing(), 0).expect("geometry already validated");
    if fg.is_empty() {
        return RibLabeling {
            labels,
            instances: Vec::new(),
            warnings: vec!["no rib voxels".into()],
        };
    }
    let dims = ribs.dims();
    let mut xs: Vec<usize> = fg.iter().map(|&i| dims.coords(i)[0]).collect();
    xs.sort_unstable();
    // midline in doubled voxel units so even counts split between columns
    let mid2 = xs[(xs.len() - 1) / 2] + xs[xs.len() / 2];
    let is_left = |i: usize| 2 * dims.coords(i)[0] > mid2;

    let mut found: Vec<(Side, Vec<usize>)> = Vec::new();
    for side in [Side::Left, Side::Right] {
        let mut half = BinaryMask::empty_like(ribs);
        for &i in &fg {
            if is_left(i) == (side == Side::Left) {
                half.data_mut()[i] = true;
            }
        }
        let comps = connected_components(&half, Connectivity::TwentySix);
        let mut members = vec![Vec::new(); comps.num_instances() as usize];
        for &i in &fg {
            let l = comps.data()[i];
            if l > 0 {
                members[l as usize - 1].push(i);
            }
        }
        found.extend(members.into_iter().map(|m| (side, m)));
    }

    let mut instances: Vec<(RibInstance, Vec<usize>)> = found
        .into_iter()
        .map(|(side, m)| {
            let mut c = [0.0f64; 3];
            for &i in &m {
                let p = ribs.voxel_center(i);
                (0..3).for_each(|k| c[k] += p[k]);
            }
            c.iter_mut().for_each(|v| *v /= m.len() as f64);
            let inst = RibInstance {
                id: 0,
                side,
                pair_index: 0,
                voxels: m.len(),
                centroid_mm: c,
            };
            (inst, m)
        })
        .collect();
    for side in [Side::Left, Side::Right] {
        let mut order: Vec<usize> = (0..instances.len()).filter(|&i| instances[i].0.side == side).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&instances[a], &instances[b]);
            cb.0.centroid_mm[2]
                .total_cmp(&ca.0.centroid_mm[2])
                .then(ca.1[0].cmp(&cb.1[0]))
        });
        for (rank, i) in order.into_iter().enumerate() {
            instances[i].0.pair_index = rank as u32 + 1;
        }
    }
    instances.sort_by_key(|(r, _)| (r.pair_index, r.side));

    let mut warnings = Vec::new();
    if !EXPECTED_INSTANCES.contains(&instances.len()) {
        warnings.push(format!(
            "{} rib instances, expected {}..={}",
            instances.len(),
            EXPECTED_INSTANCES.start(),
            EXPECTED_INSTANCES.end()
        ));
    }
    let mut out = Vec::with_capacity(instances.len());
    for (k, (mut inst, members)) in instances.into_iter().enumerate() {
        inst.id = k as u32 + 1;
        for &i in &members {
            labels.data_mut()[i] = inst.id;
        }
        if inst.pair_index > 12 {
            warnings.push(format!("{} side has more than 12 components", inst.side.as_str()));
        }
        out.push(inst);
    }
    warnings.dedup();
    for w in &warnings {
        log::warn!("{w}");
    }
    RibLabeling {
        labels,
        instances: out,
        warnings,
    }
}

/// Sidecar manifest for an instance label map.
pub fn instances_json(l: &RibLabeling) -> serde_json::Value {
    serde_json::json!({
        "instances": l.instances,
        "warnings": l.warnings,
    })
}
