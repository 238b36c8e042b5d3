//! Oracles shared by the network and acceptance tests.
#![allow(dead_code)]

use rand::Rng as _;
use ribpoint::network::model::{forward, BoundParams, Geometry, ModelParams, NetworkConfig, SAConfig};
use ribpoint::network::tape::Tape;
use ribpoint::network::tensor::Tensor;
use ribpoint::network::{ball_query, farthest_point_sample_from};
use ribpoint::rng;

/// Two levels of width 8: a few hundred parameters.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        sa_levels: vec![
            SAConfig { npoint: 16, radius: 0.5, nsample: 8, mlp: vec![8] },
            SAConfig { npoint: 4, radius: 1.0, nsample: 4, mlp: vec![8] },
        ],
        fp_levels: vec![vec![8], vec![8]],
        num_classes: 2,
        fp_k: 3,
        fp_eps: 1e-8,
        row_norm: true,
        seed: 3,
    }
}

pub fn cloud(n: usize, seed: u64) -> Vec<[f32; 3]> {
    let mut r = rng::stream(seed, 0);
    (0..n).map(|_| std::array::from_fn(|_| r.random_range(-1.0f32..1.0))).collect()
}

fn loss_f64(names: &[String], tensors: &[Tensor<f64>], cfg: &NetworkConfig, geo: &Geometry, labels: &[u8]) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::<f64>::new();
    let bound = BoundParams::bind_exact(&mut tape, names, tensors);
    let logits = forward(&mut tape, &bound, cfg, geo).unwrap();
    let loss = tape.cross_entropy(logits, labels).unwrap();
    let mut g = tape.backward(loss).unwrap();
    let grads = bound
        .vars
        .iter()
        .zip(tensors)
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    (tape.value(loss).data()[0], grads)
}

/// Parameter count and the max over all parameters of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), with central
/// differences at h = 1e-5 on 64 points.
pub fn gradient_check_max_rel_error(cfg: &NetworkConfig) -> (usize, f64) {
    let params = ModelParams::init(cfg).unwrap();
    let mut tensors: Vec<Tensor<f64>> = params.tensors.iter().map(|t| t.cast()).collect();
    // nonzero biases and scales so every parameter kind is exercised
    let mut r = rng::stream(17, 0);
    for (name, t) in params.names.iter().zip(tensors.iter_mut()) {
        if !name.ends_with(".weight") {
            let base = if name.ends_with(".scale") { 1.0 } else { 0.0 };
            t.data_mut().iter_mut().for_each(|v| *v = base + r.random_range(-0.3..0.3));
        }
    }
    let pts = cloud(64, 21);
    let labels: Vec<u8> = pts.iter().map(|p| (p[0] + 0.3 * p[2] > 0.1) as u8).collect();
    let geo = Geometry::build(&pts, cfg, Some(0)).unwrap();
    let (_, analytic) = loss_f64(&params.names, &tensors, cfg, &geo, &labels);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut count = 0;
    for ti in 0..tensors.len() {
        for j in 0..tensors[ti].len() {
            let orig = tensors[ti].data()[j];
            tensors[ti].data_mut()[j] = orig + h;
            let (lp, _) = loss_f64(&params.names, &tensors, cfg, &geo, &labels);
            tensors[ti].data_mut()[j] = orig - h;
            let (lm, _) = loss_f64(&params.names, &tensors, cfg, &geo, &labels);
            tensors[ti].data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            count += 1;
        }
    }
    (count, worst)
}

/// Number of groups, over `fixtures` random clouds of 1,000 points, where
/// `ball_query` differs from an exhaustive scan.
pub fn ball_query_mismatches(fixtures: u64) -> usize {
    let mut bad = 0;
    for f in 0..fixtures {
        let coords = cloud(1000, 100 + f);
        let centers: Vec<[f32; 3]> = coords.iter().step_by(37).copied().collect();
        let radius = 0.15 + 0.05 * (f % 5) as f64;
        let nsample = 8 + 8 * (f % 3) as usize;
        let got = ball_query(&centers, &coords, radius, nsample).unwrap();
        for (ci, c) in centers.iter().enumerate() {
            let d2 = |p: &[f32; 3]| (0..3).map(|k| (p[k] as f64 - c[k] as f64).powi(2)).sum::<f64>();
            let mut hits: Vec<usize> = (0..coords.len()).filter(|&i| d2(&coords[i]) <= radius * radius).collect();
            hits.truncate(nsample);
            while hits.len() < nsample {
                hits.push(hits[0]);
            }
            bad += (got[ci * nsample..(ci + 1) * nsample] != hits[..]) as usize;
        }
    }
    bad
}

/// FPS of two points from the collinear set {0, 1, 2, 10} starting at 0.
pub fn fps_collinear() -> Vec<usize> {
    let line = [[0.0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
    farthest_point_sample_from(&line, 2, 0).unwrap()
}

/// Number of FPS picks, over random clouds with N <= 64 and m <= 8, that
/// are not a farthest point from the picks before them.
pub fn fps_greedy_violations(cases: u64) -> usize {
    let mut bad = 0;
    for c in 0..cases {
        let n = 8 + (c as usize * 7) % 57;
        let m = 2 + (c as usize) % 7;
        let pts = cloud(n, 300 + c);
        let sel = farthest_point_sample_from(&pts, m, 0).unwrap();
        let d = |a: usize, b: usize| (0..3).map(|k| (pts[a][k] as f64 - pts[b][k] as f64).powi(2)).sum::<f64>();
        let min_to = |set: &[usize], p: usize| set.iter().map(|&s| d(s, p)).fold(f64::INFINITY, f64::min);
        for k in 1..m {
            let (prefix, pick) = (&sel[..k], sel[k]);
            let best = (0..n).map(|p| min_to(prefix, p)).fold(0.0, f64::max);
            bad += (min_to(prefix, pick) < best) as usize;
        }
    }
    bad
}

/// Grid sizes small enough for brute-force checks.
pub fn small_dims() -> impl proptest::strategy::Strategy<Value = ribpoint::volume::Dims> {
    use proptest::prelude::*;
    (2usize..9, 2usize..9, 2usize..7).prop_map(|(x, y, z)| ribpoint::volume::Dims::new(x, y, z))
}

/// A random mask on `dims` with roughly `density` of its voxels set.
pub fn random_mask(dims: ribpoint::volume::Dims, density: f64, seed: u64) -> ribpoint::volume::BinaryMask {
    let mut r = rng::stream(seed, 1);
    let data = (0..dims.len()).map(|_| r.random_bool(density)).collect();
    ribpoint::volume::BinaryMask::from_vec(dims, [1.0; 3], data).unwrap()
}

/// A mask with every voxel within `radius` voxels of the polyline set.
pub fn tube(dims: ribpoint::volume::Dims, spacing: [f32; 3], poly: &[[f64; 3]], radius: f64) -> ribpoint::volume::BinaryMask {
    let mut m = ribpoint::volume::BinaryMask::filled(dims, spacing, false).unwrap();
    for i in 0..dims.len() {
        let c = dims.coords(i).map(|v| v as f64 + 0.5);
        let near = poly.windows(2).any(|w| {
            let d: [f64; 3] = std::array::from_fn(|k| w[1][k] - w[0][k]);
            let len2: f64 = d.iter().map(|v| v * v).sum();
            let t = if len2 > 0.0 {
                ((0..3).map(|k| (c[k] - w[0][k]) * d[k]).sum::<f64>() / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (0..3).map(|k| (c[k] - w[0][k] - t * d[k]).powi(2)).sum::<f64>() <= radius * radius
        });
        m.data_mut()[i] = near;
    }
    m
}
