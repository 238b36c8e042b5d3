//! Chunked inference.
//!
//! The encoder and all but the last decoder level run once over the whole
//! set; the final interpolation, MLP and head run over fixed-size chunks of
//! the input points. Every per-point step is row independent, so the chunk
//! size does not change the result.

use serde::{Deserialize, Serialize};

use super::model::{forward_coarse, forward_fine, interpolation, BoundParams, Geometry, ModelParams};
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::pointcloud::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Points per final-level chunk; 0 evaluates all points at once.
    pub chunk_size: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { chunk_size: 32_768 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// Row-major `len × num_classes` softmax probabilities.
    pub probs: Vec<f32>,
    pub num_classes: usize,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn prob(&self, i: usize, class: usize) -> f32 {
        self.probs[i * self.num_classes + class]
    }
}

pub fn infer(params: &ModelParams, points: &PointSet) -> Result<Prediction> {
    infer_with(params, points, &InferConfig::default())
}

/// Class probabilities and argmax labels (lowest class on ties) for points
/// already in normalized coordinates.
pub fn infer_with(params: &ModelParams, points: &PointSet, cfg: &InferConfig) -> Result<Prediction> {
    params.validate()?;
    points.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("cannot run inference on an empty point set"));
    }
    let net = &params.config;
    let geo = Geometry::build_coarse(&points.coords, net, None)?;
    let mut tape = Tape::<f32>::inference();
    let bound = BoundParams::bind(&mut tape, params, false);
    let level1 = forward_coarse(&mut tape, &bound, net, &geo)?;
    let base = tape.len();

    let c = net.num_classes;
    let chunk = if cfg.chunk_size == 0 { points.len() } else { cfg.chunk_size };
    let mut labels = Vec::with_capacity(points.len());
    let mut probs = Vec::with_capacity(points.len() * c);
    for targets in points.coords.chunks(chunk) {
        let fpg = interpolation(targets, &geo.levels[0].coords, net.fp_k, net.fp_eps)?;
        let logits = forward_fine(&mut tape, &bound, net, level1, targets, &fpg)?;
        for row in tape.value(logits).data().chunks_exact(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            labels.push(best as u8);
            probs.extend(e.iter().map(|v| (v / z) as f32));
        }
        tape.truncate(base);
    }
    Ok(Prediction {
        labels,
        probs,
        num_classes: c,
    })
}
