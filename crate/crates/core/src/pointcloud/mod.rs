//! Point sets sampled from sparse foreground voxels.

mod rpts;

pub use rpts::{read_points, write_points, RPTS_MAGIC, RPTS_VERSION};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::volume::{BinaryMask, LabelMap};

pub const LABEL_OTHER_BONE: u8 = 0;
pub const LABEL_RIB: u8 = 1;

/// Default points per training sample.
pub const TRAIN_POINTS: usize = 30_000;
/// Default points per inference sample.
pub const INFER_POINTS: usize = 250_000;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub coords: Vec<[f32; 3]>,
    pub labels: Option<Vec<u8>>,
    /// Linear index of the source voxel of each point.
    pub voxel_index: Option<Vec<usize>>,
}

impl PointSet {
    pub fn new(coords: Vec<[f32; 3]>) -> Self {
        PointSet {
            coords,
            labels: None,
            voxel_index: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.coords.len() {
            return Err(Error::DimMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                self.coords.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Subset (or resampling) by point index, carrying labels and voxel
    /// references along.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        PointSet {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            voxel_index: self
                .voxel_index
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        for (name, len) in [
            ("labels", self.labels.as_ref().map(Vec::len)),
            ("voxel_index", self.voxel_index.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != self.len() {
                    return Err(Error::DimMismatch(format!("{name} has {len} entries for {} points", self.len())));
                }
            }
        }
        Ok(())
    }
}

/// Maps millimeter coordinates into the unit ball: `(p - centroid) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl NormTransform {
    pub const IDENTITY: NormTransform = NormTransform {
        centroid: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: [f32; 3]) -> [f32; 3] {
        std::array::from_fn(|k| ((p[k] as f64 - self.centroid[k]) / self.scale) as f32)
    }

    pub fn invert(&self, p: [f32; 3]) -> [f32; 3] {
        std::array::from_fn(|k| (p[k] as f64 * self.scale + self.centroid[k]) as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub scale_range: [f64; 2],
    /// Per-axis translation bound in normalized units.
    pub translate_range: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_range: [0.9, 1.1],
            translate_range: 0.1,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        scale_range: [1.0, 1.0],
        translate_range: 0.0,
        jitter_sigma: 0.0,
        jitter_clip: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("scale_range must satisfy 0 < lo <= hi, got {:?}", self.scale_range)));
        }
        if !(self.translate_range >= 0.0 && self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return Err(Error::invalid("augmentation magnitudes must be non-negative"));
        }
        Ok(())
    }
}

/// One point per foreground voxel at its center, `(index + 0.5) * spacing`.
/// With a label map, points on nonzero labels are ribs.
pub fn voxels_to_points(m: &BinaryMask, labels: Option<&LabelMap>) -> Result<PointSet> {
    if let Some(l) = labels {
        m.ensure_same_dims(l, "voxels_to_points labels")?;
    }
    let fg = m.foreground();
    let coords = fg
        .iter()
        .map(|&i| m.voxel_center(i).map(|c| c as f32))
        .collect();
    let point_labels = labels.map(|l| {
        fg.iter()
            .map(|&i| if l.data()[i] != 0 { LABEL_RIB } else { LABEL_OTHER_BONE })
            .collect()
    });
    Ok(PointSet {
        coords,
        labels: point_labels,
        voxel_index: Some(fg),
    })
}

/// Centers the set on its centroid and scales the farthest point to radius 1.
/// A set with zero extent keeps scale 1.
pub fn normalize(p: &PointSet) -> Result<(PointSet, NormTransform)> {
    if p.is_empty() {
        return Err(Error::invalid("cannot normalize an empty point set"));
    }
    let n = p.len() as f64;
    let mut centroid = [0.0f64; 3];
    for c in &p.coords {
        for k in 0..3 {
            centroid[k] += c[k] as f64;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let max_r2 = p
        .coords
        .iter()
        .map(|c| (0..3).map(|k| (c[k] as f64 - centroid[k]).powi(2)).sum::<f64>())
        .fold(0.0f64, f64::max);
    let scale = if max_r2 > 0.0 { max_r2.sqrt() } else { 1.0 };
    let t = NormTransform { centroid, scale };
    let out = PointSet {
        coords: p.coords.iter().map(|c| t.apply(*c)).collect(),
        labels: p.labels.clone(),
        voxel_index: p.voxel_index.clone(),
    };
    Ok((out, t))
}

/// Indices for a fixed-size sample of `n` out of `len` points.
///
/// With `len >= n` this is a partial Fisher-Yates shuffle (distinct indices).
/// With `len < n` every point appears once, in shuffled order, followed by
/// `n - len` draws with replacement.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    if len == 0 {
        return Err(Error::invalid("cannot sample from an empty point set"));
    }
    let mut rng = rng::stream(seed, streams::DOWNSAMPLE);
    let mut idx: Vec<usize> = (0..len).collect();
    let take = n.min(len);
    for i in 0..take {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(take);
    while idx.len() < n {
        idx.push(rng.random_range(0..len));
    }
    Ok(idx)
}

pub fn random_downsample(p: &PointSet, n: usize, seed: u64) -> Result<PointSet> {
    Ok(p.select(&sample_indices(p.len(), n, seed)?))
}

/// Global isotropic scale, global translation, then clipped per-point
/// Gaussian jitter.
pub fn augment(p: &PointSet, cfg: &AugmentConfig, seed: u64) -> Result<PointSet> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, streams::AUGMENT);
    let [lo, hi] = cfg.scale_range;
    let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let t: [f64; 3] = std::array::from_fn(|_| {
        if cfg.translate_range > 0.0 {
            rng.random_range(-cfg.translate_range..=cfg.translate_range)
        } else {
            0.0
        }
    });
    let jitter = (cfg.jitter_sigma > 0.0 && cfg.jitter_clip > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma).expect("sigma validated"));
    let coords = p
        .coords
        .iter()
        .map(|c| {
            std::array::from_fn(|k| {
                let j = jitter
                    .as_ref()
                    .map_or(0.0, |d| d.sample(&mut rng).clamp(-cfg.jitter_clip, cfg.jitter_clip));
                (c[k] as f64 * s + t[k] + j) as f32
            })
        })
        .collect();
    Ok(PointSet {
        coords,
        labels: p.labels.clone(),
        voxel_index: p.voxel_index.clone(),
    })
}
