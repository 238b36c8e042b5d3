//! End-to-end steps shared by the command-line tool and the tests.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::bench::{bench, dense_conv_baseline, Stage, TimingReport};
use crate::metrics::{dice, dice_labels, per_rib_recall, CaseReport};
use crate::network::{infer_with, InferConfig, ModelParams, Prediction};
use crate::pointcloud::{normalize, random_downsample, voxels_to_points, NormTransform, PointSet, INFER_POINTS, LABEL_RIB};
use crate::postprocess::{points_to_voxel_mask, DEFAULT_DILATION};
use crate::volume::{binarize, remove_exterior_with, BinaryMask, BodyConfig, LabelMap, StructuringElement, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub bone_threshold_hu: i16,
    /// Drop bone outside the patient body before sampling.
    pub remove_exterior: bool,
    pub body_threshold_hu: i16,
    pub points: usize,
    pub dilation: StructuringElement,
    pub infer: InferConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            bone_threshold_hu: crate::volume::BONE_THRESHOLD_HU,
            remove_exterior: true,
            body_threshold_hu: BodyConfig::default().body_threshold_hu,
            points: INFER_POINTS,
            dilation: DEFAULT_DILATION,
            infer: InferConfig::default(),
        }
    }
}

/// The bone candidate mask points are drawn from.
pub fn candidate_mask(v: &Volume, cfg: &SegmentConfig) -> BinaryMask {
    if cfg.remove_exterior {
        remove_exterior_with(
            v,
            &BodyConfig {
                body_threshold_hu: cfg.body_threshold_hu,
                bone_threshold_hu: cfg.bone_threshold_hu,
            },
        )
    } else {
        binarize(v, cfg.bone_threshold_hu)
    }
}

/// Every candidate voxel as a point, labeled from the truth map when given.
pub fn case_points(v: &Volume, truth: Option<&LabelMap>, cfg: &SegmentConfig) -> Result<(BinaryMask, PointSet)> {
    let mask = candidate_mask(v, cfg);
    let points = voxels_to_points(&mask, truth)?;
    Ok((mask, points))
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: BinaryMask,
    /// The sampled points in millimeters.
    pub points: PointSet,
    pub transform: NormTransform,
    pub prediction: Prediction,
}

/// Samples, normalizes, runs the network and maps predictions back to a
/// voxel mask within `candidates`.
pub fn segment_points(
    params: &ModelParams,
    candidates: &BinaryMask,
    all_points: &PointSet,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<Segmentation> {
    let n = cfg.points.max(params.config.min_points());
    let sampled = random_downsample(all_points, n, seed)?;
    let (normed, transform) = normalize(&sampled)?;
    let prediction = infer_with(params, &normed, &cfg.infer)?;
    let mask = points_to_voxel_mask(&sampled, &prediction.labels, &transform, candidates, &cfg.dilation)?;
    Ok(Segmentation {
        mask,
        points: sampled,
        transform,
        prediction,
    })
}

pub fn segment_volume(params: &ModelParams, v: &Volume, cfg: &SegmentConfig, seed: u64) -> Result<Segmentation> {
    let (mask, points) = case_points(v, None, cfg)?;
    segment_points(params, &mask, &points, cfg, seed)
}

/// Voxel Dice, point Dice (when the sampled points carry labels) and
/// per-rib recall against the truth instances.
pub fn evaluate(case_id: &str, seg: &Segmentation, truth: &LabelMap) -> Result<CaseReport> {
    let dice_point = match &seg.points.labels {
        Some(l) => Some(dice_labels(&seg.prediction.labels, l, LABEL_RIB)?),
        None => None,
    };
    Ok(CaseReport {
        case_id: case_id.to_string(),
        dice_voxel: dice(&seg.mask, &truth.any_label())?,
        dice_point,
        recall: per_rib_recall(truth, &seg.mask)?,
    })
}

/// Name of the network-only stage in [`benchmark`] reports.
pub const SPARSE_FORWARD: &str = "sparse_forward";
/// Name of the dense reference stage in [`benchmark`] reports.
pub const DENSE_BASELINE: &str = "dense_baseline";

/// Times every pipeline stage on one volume plus the dense convolution
/// reference, single-threaded. `derived` carries the dense over sparse
/// forward ratio.
pub fn benchmark(params: &ModelParams, v: &Volume, cfg: &SegmentConfig, repeats: usize, seed: u64) -> Result<TimingReport> {
    let n = cfg.points.max(params.config.min_points());
    let (mask, points) = case_points(v, None, cfg)?;
    let sampled = random_downsample(&points, n, seed)?;
    let (normed, transform) = normalize(&sampled)?;
    let prediction = infer_with(params, &normed, &cfg.infer)?;
    let voxels = v.dims().len();
    let failure = std::cell::RefCell::new(None);
    let keep = |r: Result<()>| {
        if let Err(e) = r {
            failure.borrow_mut().get_or_insert(e);
        }
    };
    let stages = vec![
        Stage {
            voxels: Some(voxels),
            ..Stage::new("binarize", || {
                std::hint::black_box(candidate_mask(v, cfg));
            })
        },
        Stage {
            points: Some(n),
            ..Stage::new("sample", || {
                keep(random_downsample(&points, n, seed).and_then(|s| normalize(&s)).map(|r| {
                    std::hint::black_box(r);
                }))
            })
        },
        Stage {
            points: Some(n),
            ..Stage::new(SPARSE_FORWARD, || {
                keep(infer_with(params, &normed, &cfg.infer).map(|r| {
                    std::hint::black_box(r);
                }))
            })
        },
        Stage {
            points: Some(n),
            ..Stage::new("postprocess", || {
                keep(
                    points_to_voxel_mask(&sampled, &prediction.labels, &transform, &mask, &cfg.dilation).map(|r| {
                        std::hint::black_box(r);
                    }),
                )
            })
        },
        Stage {
            voxels: Some(voxels),
            ..Stage::new(DENSE_BASELINE, || {
                std::hint::black_box(dense_conv_baseline(v));
            })
        },
    ];
    let mut report = bench(stages, repeats)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let sparse = report.stage(SPARSE_FORWARD).map(|s| s.median).unwrap_or(f64::NAN);
    let dense = report.stage(DENSE_BASELINE).map(|s| s.median).unwrap_or(f64::NAN);
    report.derived.insert("dense_over_sparse_forward".into(), serde_json::json!(dense / sparse));
    report.derived.insert("volume_dims".into(), serde_json::json!(v.dims().as_array()));
    Ok(report)
}
