//! Annotation-style bone processing: body extraction and rib/vertebra
//! separation.

use serde::{Deserialize, Serialize};

use super::{
    binarize, connected_components, dilate, erode, intersect, BinaryMask, Connectivity,
    StructuringElement, Volume, BONE_THRESHOLD_HU,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyConfig {
    /// Voxels at or above this HU count as non-air when finding the body.
    pub body_threshold_hu: i16,
    pub bone_threshold_hu: i16,
}

impl Default for BodyConfig {
    fn default() -> Self {
        BodyConfig {
            body_threshold_hu: -200,
            bone_threshold_hu: BONE_THRESHOLD_HU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    /// Ball radius (voxels) of the erosion that cuts thin rib attachments.
    pub erosion_radius: usize,
    /// Width of the central sagittal corridor as a fraction of the bone
    /// bounding-box x-extent.
    pub corridor_fraction: f64,
    /// Rib fragments smaller than this are discarded as noise.
    pub min_component: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            erosion_radius: 2,
            corridor_fraction: 0.25,
            min_component: 50,
        }
    }
}

/// Components of `mask` that share at least one voxel with `marker`
/// (binary geodesic reconstruction by dilation).
pub fn reconstruct(marker: &BinaryMask, mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let labels = connected_components(mask, connectivity);
    let mut keep = vec![false; labels.num_instances() as usize + 1];
    for (l, m) in labels.data().iter().zip(marker.data()) {
        if *m && *l != 0 {
            keep[*l as usize] = true;
        }
    }
    labels.map(|l| *l != 0 && keep[*l as usize])
}

pub fn remove_exterior(v: &Volume) -> BinaryMask {
    remove_exterior_with(v, &BodyConfig::default())
}

/// Bone voxels inside the body, where the body is the largest non-air
/// component (6-connected) with its internal cavities filled.
pub fn remove_exterior_with(v: &Volume, cfg: &BodyConfig) -> BinaryMask {
    let bone = binarize(v, cfg.bone_threshold_hu);
    let tissue = binarize(v, cfg.body_threshold_hu);
    if tissue.is_clear() {
        return bone;
    }
    let tissue_labels = connected_components(&tissue, Connectivity::Six);
    let body_core = tissue_labels.map(|l| *l == 1);
    // Everything outside the body that connects to the grid border is
    // exterior; enclosed cavities (lungs) become part of the body.
    let outside = body_core.complement();
    let outside_labels = connected_components(&outside, Connectivity::TwentySix);
    let dims = v.dims();
    let mut exterior = vec![false; outside_labels.num_instances() as usize + 1];
    for (i, &l) in outside_labels.data().iter().enumerate() {
        if l == 0 || exterior[l as usize] {
            continue;
        }
        let [x, y, z] = dims.coords(i);
        if x == 0 || y == 0 || z == 0 || x + 1 == dims.nx || y + 1 == dims.ny || z + 1 == dims.nz {
            exterior[l as usize] = true;
        }
    }
    let body = outside_labels.map(|l| *l == 0 || !exterior[*l as usize]);
    intersect(&bone, &body).expect("same geometry")
}

pub fn separate_ribs_from_vertebra(bone: &BinaryMask) -> (BinaryMask, BinaryMask) {
    separate_ribs_from_vertebra_with(bone, &SeparationConfig::default())
}

/// Splits a body-interior bone mask into `(ribs, vertebra)`.
///
/// Erosion breaks the thin costovertebral joints; eroded components that
/// reach the central corridor seed the vertebra, which is then grown back by
/// the same radius inside the bone. The remaining large components are ribs.
pub fn separate_ribs_from_vertebra_with(
    bone: &BinaryMask,
    cfg: &SeparationConfig,
) -> (BinaryMask, BinaryMask) {
    let empty = BinaryMask::empty_like(bone);
    if bone.is_clear() {
        return (empty.clone(), empty);
    }
    let dims = bone.dims();
    let (mut lo, mut hi) = (usize::MAX, 0usize);
    for i in bone.foreground() {
        let x = dims.coords(i)[0];
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let center = (lo + hi) as f64 / 2.0;
    let half = (hi - lo + 1) as f64 * cfg.corridor_fraction / 2.0;
    let in_corridor = |x: usize| ((x as f64 + 0.5) - (center + 0.5)).abs() <= half;

    let se = StructuringElement::ball(cfg.erosion_radius);
    let core = erode(bone, &se);
    let core_labels = connected_components(&core, Connectivity::TwentySix);
    let mut seed = vec![false; core_labels.num_instances() as usize + 1];
    for (i, &l) in core_labels.data().iter().enumerate() {
        if l != 0 && in_corridor(dims.coords(i)[0]) {
            seed[l as usize] = true;
        }
    }
    let vertebra_core = core_labels.map(|l| *l != 0 && seed[*l as usize]);
    let vertebra = intersect(&dilate(&vertebra_core, &se), bone).expect("same geometry");

    let rest = bone.difference(&vertebra).expect("same geometry");
    let rest_labels = connected_components(&rest, Connectivity::TwentySix);
    let counts = rest_labels.label_counts();
    let ribs = rest_labels.map(|l| *l != 0 && counts[*l as usize] >= cfg.min_component);
    (ribs, vertebra)
}
