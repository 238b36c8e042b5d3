//! Rib centerlines: dilate the rib into a solid tube, pick the two ends of
//! its geodesic diameter, follow a medial shortest path between them, then
//! smooth and resample.

mod edt;

pub use edt::distance_transform_sq;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{RibLabeling, Side};
use crate::rng::{self, streams};
use crate::volume::{dilate, BinaryMask, Connectivity, Dims, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EndpointMode {
    /// Two-sweep geodesic diameter.
    DoubleSweep,
    /// A random voxel among the farthest `fraction` of each end.
    Random { seed: u64, fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenterlineConfig {
    pub dilation: StructuringElement,
    pub window: usize,
    /// Resampling step in millimeters.
    pub step_mm: f64,
    pub endpoints: EndpointMode,
    /// Path ends whose boundary distance is below this fraction of the
    /// path's median boundary distance are dropped, pulling the endpoints
    /// from the rim of the dilated tube onto its axis. 0 keeps the full path.
    pub end_trim: f64,
}

impl Default for CenterlineConfig {
    fn default() -> Self {
        CenterlineConfig {
            dilation: StructuringElement::ball(3),
            window: 5,
            step_mm: 2.0,
            endpoints: EndpointMode::DoubleSweep,
            end_trim: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    /// Millimeter polyline.
    pub points: Vec<[f64; 3]>,
    pub arc_length: f64,
}

impl Centerline {
    pub fn from_points(points: Vec<[f64; 3]>) -> Self {
        let arc_length = polyline_length(&points);
        Centerline { points, arc_length }
    }
}

pub fn polyline_length(p: &[[f64; 3]]) -> f64 {
    p.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Centered moving average whose window shrinks symmetrically near the ends,
/// followed by resampling every `step` along the arc length. Both endpoints
/// are kept exactly.
pub fn smooth_resample(poly: &[[f64; 3]], window: usize, step: f64) -> Result<Vec<[f64; 3]>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!("resampling step must be positive, got {step}")));
    }
    if poly.len() < 2 {
        return Err(Error::invalid("smoothing needs at least two points"));
    }
    let n = poly.len();
    let half = window.max(1) / 2;
    let smoothed: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &poly[i - h..=i + h];
            std::array::from_fn(|k| span.iter().map(|p| p[k]).sum::<f64>() / span.len() as f64)
        })
        .collect();

    let total = polyline_length(&smoothed);
    let mut out = vec![smoothed[0]];
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let mut k = 1usize;
    loop {
        let s = k as f64 * step;
        if s >= total - 1e-9 * step.max(1.0) {
            break;
        }
        while seg + 1 < n {
            let len = dist(&smoothed[seg], &smoothed[seg + 1]);
            if seg_start + len >= s {
                let t = if len > 0.0 { (s - seg_start) / len } else { 0.0 };
                let (a, b) = (smoothed[seg], smoothed[seg + 1]);
                out.push(std::array::from_fn(|c| a[c] + t * (b[c] - a[c])));
                break;
            }
            seg_start += len;
            seg += 1;
        }
        k += 1;
    }
    let last = smoothed[n - 1];
    if dist(out.last().unwrap(), &last) > 0.0 || out.len() == 1 {
        out.push(last);
    }
    out.dedup_by(|a, b| dist(a, b) == 0.0);
    Ok(out)
}

/// A view of the bounding box of a mask, padded by `margin` and clipped to
/// the grid.
struct SubGrid {
    origin: [usize; 3],
    dims: Dims,
}

impl SubGrid {
    fn around(m: &BinaryMask, margin: usize) -> Option<Self> {
        let d = m.dims();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for i in m.foreground() {
            let c = d.coords(i);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        if lo[0] == usize::MAX {
            return None;
        }
        let full = d.as_array();
        let origin: [usize; 3] = std::array::from_fn(|k| lo[k].saturating_sub(margin));
        let end: [usize; 3] = std::array::from_fn(|k| (hi[k] + margin + 1).min(full[k]));
        Some(SubGrid {
            origin,
            dims: Dims::new(end[0] - origin[0], end[1] - origin[1], end[2] - origin[2]),
        })
    }

    fn extract(&self, m: &BinaryMask) -> BinaryMask {
        let src = m.dims();
        let mut data = Vec::with_capacity(self.dims.len());
        for z in 0..self.dims.nz {
            for y in 0..self.dims.ny {
                let row = src.index(self.origin[0], self.origin[1] + y, self.origin[2] + z);
                data.extend_from_slice(&m.data()[row..row + self.dims.nx]);
            }
        }
        BinaryMask::from_vec(self.dims, m.spacing(), data).expect("sub-grid geometry")
    }

    fn to_full(&self, i: usize) -> [usize; 3] {
        let c = self.dims.coords(i);
        std::array::from_fn(|k| c[k] + self.origin[k])
    }
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on lowest node index
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Graph<'a> {
    region: &'a BinaryMask,
    neighbours: Vec<([i64; 3], f64)>,
}

impl<'a> Graph<'a> {
    fn new(region: &'a BinaryMask) -> Self {
        let sp = region.spacing();
        let neighbours = Connectivity::TwentySix
            .offsets()
            .into_iter()
            .map(|o| {
                let l = (0..3).map(|k| (o[k] as f64 * sp[k] as f64).powi(2)).sum::<f64>().sqrt();
                (o, l)
            })
            .collect();
        Graph { region, neighbours }
    }

    /// Single-source shortest paths; `weight(target)` scales each step.
    fn dijkstra(&self, source: usize, weight: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<usize>) {
        let dims = self.region.dims();
        let mut cost = vec![f64::INFINITY; dims.len()];
        let mut prev = vec![usize::MAX; dims.len()];
        let mut heap = BinaryHeap::new();
        cost[source] = 0.0;
        heap.push(Entry { cost: 0.0, node: source });
        while let Some(Entry { cost: c, node }) = heap.pop() {
            if c > cost[node] {
                continue;
            }
            let p = dims.coords(node);
            for &(o, len) in &self.neighbours {
                let (x, y, z) = (p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]);
                if !dims.contains(x, y, z) {
                    continue;
                }
                let t = dims.index(x as usize, y as usize, z as usize);
                if !self.region.data()[t] {
                    continue;
                }
                let nc = c + len * weight(t);
                if nc < cost[t] || (nc == cost[t] && node < prev[t]) {
                    let improved = nc < cost[t];
                    cost[t] = nc;
                    prev[t] = node;
                    if improved {
                        heap.push(Entry { cost: nc, node: t });
                    }
                }
            }
        }
        (cost, prev)
    }
}

/// Farthest reached node; lowest index on ties.
fn farthest(cost: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &c) in cost.iter().enumerate() {
        if c.is_finite() && (!cost[best].is_finite() || c > cost[best]) {
            best = i;
        }
    }
    best
}

fn random_far(cost: &[f64], fraction: f64, r: &mut rng::Rng) -> usize {
    let max = cost[farthest(cost)];
    let cut = max * (1.0 - fraction.clamp(0.0, 1.0));
    let pool: Vec<usize> = (0..cost.len()).filter(|&i| cost[i].is_finite() && cost[i] >= cut).collect();
    pool[r.random_range(0..pool.len())]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub centerline: Centerline,
    /// Unsmoothed path in millimeters.
    pub raw_path: Vec<[f64; 3]>,
    pub warnings: Vec<String>,
}

/// Centerline of one connected rib mask. `anchor` (the vertebra, when known)
/// fixes the orientation so the polyline starts at the end nearest to it;
/// without it the start is the more posterior end (larger y).
pub fn extract_centerline(rib: &BinaryMask, cfg: &CenterlineConfig, anchor: Option<&BinaryMask>) -> Result<Extraction> {
    let sub = SubGrid::around(rib, cfg.dilation.radius + 1).ok_or_else(|| Error::invalid("empty rib mask"))?;
    let sp = rib.spacing();
    let center_mm = |c: [usize; 3]| -> [f64; 3] { std::array::from_fn(|k| (c[k] as f64 + 0.5) * sp[k] as f64) };
    if rib.count() == 1 {
        let c = center_mm(rib.dims().coords(rib.foreground()[0]));
        return Ok(Extraction {
            centerline: Centerline::from_points(vec![c]),
            raw_path: vec![c],
            warnings: vec!["single-voxel rib, degenerate centerline".into()],
        });
    }
    let region = dilate(&sub.extract(rib), &cfg.dilation);
    let edt = distance_transform_sq(&region, [1.0; 3]);
    let graph = Graph::new(&region);
    let seed_node = region.foreground()[0];
    let unit = |_: usize| 1.0;

    let (a, b) = match cfg.endpoints {
        EndpointMode::DoubleSweep => {
            let a = farthest(&graph.dijkstra(seed_node, unit).0);
            let b = farthest(&graph.dijkstra(a, unit).0);
            (a, b)
        }
        EndpointMode::Random { seed, fraction } => {
            let mut r = rng::stream(seed, streams::ENDPOINTS);
            let a0 = farthest(&graph.dijkstra(seed_node, unit).0);
            let b0 = farthest(&graph.dijkstra(a0, unit).0);
            let a = random_far(&graph.dijkstra(b0, unit).0, fraction, &mut r);
            let b = random_far(&graph.dijkstra(a0, unit).0, fraction, &mut r);
            (a, b)
        }
    };
    let mut warnings = Vec::new();
    if a == b {
        warnings.push("rib region has a single end, degenerate centerline".into());
    }
    let (_, prev) = graph.dijkstra(a, |t| 1.0 / (1.0 + edt[t].sqrt()));
    let mut path = vec![b];
    let mut cur = b;
    while cur != a {
        cur = prev[cur];
        if cur == usize::MAX {
            return Err(Error::Other("rib region is not connected".into()));
        }
        path.push(cur);
    }
    path.reverse();
    if cfg.end_trim > 0.0 && path.len() > 2 {
        let depth: Vec<f64> = path.iter().map(|&i| edt[i].sqrt()).collect();
        let mut sorted = depth.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = cfg.end_trim * sorted[sorted.len() / 2];
        let i0 = depth.iter().position(|&d| d >= cut).unwrap_or(0);
        let i1 = depth.iter().rposition(|&d| d >= cut).unwrap_or(path.len() - 1);
        if i1 > i0 {
            path = path[i0..=i1].to_vec();
        }
    }
    let (a, b) = (path[0], *path.last().unwrap());
    let mut raw: Vec<[f64; 3]> = path.iter().map(|&i| center_mm(sub.to_full(i))).collect();

    let first = sub.to_full(a);
    let last = sub.to_full(b);
    let flip = match anchor.filter(|v| !v.is_clear() && v.dims() == rib.dims()) {
        Some(v) => {
            let d = distance_to_fg_sq(v, &[first, last]);
            d[1] < d[0]
        }
        None => last[1] > first[1],
    };
    if flip {
        raw.reverse();
    }
    let points = if raw.len() >= 2 {
        smooth_resample(&raw, cfg.window, cfg.step_mm)?
    } else {
        raw.clone()
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Extraction {
        centerline: Centerline::from_points(points),
        raw_path: raw,
        warnings,
    })
}

fn distance_to_fg_sq(m: &BinaryMask, probes: &[[usize; 3]]) -> Vec<f64> {
    let fg: Vec<[usize; 3]> = m.foreground().into_iter().map(|i| m.dims().coords(i)).collect();
    probes
        .iter()
        .map(|p| {
            fg.iter()
                .map(|q| (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibCenterline {
    pub id: u32,
    pub side: Side,
    pub pair_index: u32,
    pub points: Vec<[f64; 3]>,
    pub arc_length: f64,
}

/// Centerlines of every labeled instance, in instance order.
pub fn extract_all(labeling: &RibLabeling, cfg: &CenterlineConfig, anchor: Option<&BinaryMask>) -> Result<Vec<RibCenterline>> {
    labeling
        .instances
        .iter()
        .map(|inst| {
            let m = labeling.labels.instance_mask(inst.id);
            let e = extract_centerline(&m, cfg, anchor)?;
            Ok(RibCenterline {
                id: inst.id,
                side: inst.side,
                pair_index: inst.pair_index,
                points: e.centerline.points,
                arc_length: e.centerline.arc_length,
            })
        })
        .collect()
}

pub fn centerlines_json(case_id: &str, ribs: &[RibCenterline]) -> serde_json::Value {
    serde_json::json!({ "case_id": case_id, "ribs": ribs })
}

/// Distance from `p` to the polyline `poly`.
pub fn point_to_polyline(p: &[f64; 3], poly: &[[f64; 3]]) -> f64 {
    if poly.len() == 1 {
        return dist(p, &poly[0]);
    }
    poly.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab: [f64; 3] = std::array::from_fn(|k| b[k] - a[k]);
            let ap: [f64; 3] = std::array::from_fn(|k| p[k] - a[k]);
            let l2: f64 = ab.iter().map(|v| v * v).sum();
            let t = if l2 > 0.0 {
                ((0..3).map(|k| ab[k] * ap[k]).sum::<f64>() / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q: [f64; 3] = std::array::from_fn(|k| a[k] + t * ab[k]);
            dist(p, &q)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Mean of the two directed mean point-to-polyline distances.
pub fn mean_symmetric_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let dir = |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().map(|p| point_to_polyline(p, y)).sum::<f64>() / x.len() as f64;
    0.5 * (dir(a, b) + dir(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_unchanged() {
        let line: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 2.0, 1.0, -3.0]).collect();
        let out = smooth_resample(&line, 5, 2.0).unwrap();
        assert_eq!(out.len(), line.len());
        for (a, b) in out.iter().zip(&line) {
            assert!(dist(a, b) < 1e-6);
        }
    }

    #[test]
    fn window_one_native_step_returns_input() {
        let poly: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, (i % 2) as f64 * 0.0, 0.0]).collect();
        let out = smooth_resample(&poly, 1, 1.0).unwrap();
        assert_eq!(out.len(), poly.len());
        for (a, b) in out.iter().zip(&poly) {
            assert!(dist(a, b) < 1e-9);
        }
    }

    #[test]
    fn zigzag_amplitude_shrinks() {
        let a = 1.5;
        let wave = [0.0, a, 0.0, -a];
        let poly: Vec<[f64; 3]> = (0..21).map(|i| [i as f64, wave[i % 4], 0.0]).collect();
        let out = smooth_resample(&poly, 3, 0.25).unwrap();
        let max = out.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
        assert!(max < a, "{max}");
        assert_eq!(out[0], poly[0]);
        assert_eq!(*out.last().unwrap(), poly[20]);
    }

    #[test]
    fn bad_step_errors() {
        let p = [[0.0; 3], [1.0, 0.0, 0.0]];
        assert!(smooth_resample(&p, 3, 0.0).is_err());
        assert!(smooth_resample(&p, 3, -1.0).is_err());
    }

    #[test]
    fn cylinder_axis_recovered() {
        let d = Dims::new(60, 15, 15);
        let mut m = BinaryMask::filled(d, [1.0; 3], false).unwrap();
        for z in 0..15 {
            for y in 0..15 {
                for x in 5..55 {
                    if (y as f64 - 7.0).powi(2) + (z as f64 - 7.0).powi(2) <= 9.0 {
                        m.set(x, y, z, true);
                    }
                }
            }
        }
        let e = extract_centerline(&m, &CenterlineConfig::default(), None).unwrap();
        for p in &e.centerline.points {
            let off = ((p[1] - 7.5).powi(2) + (p[2] - 7.5).powi(2)).sqrt();
            assert!(off <= 1.0, "{p:?}");
        }
        let pts = &e.centerline.points;
        let chord = dist(&pts[0], pts.last().unwrap());
        assert!(e.centerline.arc_length >= chord);
        assert!(chord > 40.0);
    }

    #[test]
    fn single_voxel_is_degenerate() {
        let mut m = BinaryMask::filled(Dims::new(5, 5, 5), [1.0; 3], false).unwrap();
        m.set(2, 2, 2, true);
        let e = extract_centerline(&m, &CenterlineConfig::default(), None).unwrap();
        assert_eq!(e.centerline.points.len(), 1);
        assert!(!e.warnings.is_empty());
        let empty = BinaryMask::filled(Dims::new(5, 5, 5), [1.0; 3], false).unwrap();
        assert!(extract_centerline(&empty, &CenterlineConfig::default(), None).is_err());
    }

    #[test]
    fn symmetric_distance_of_parallel_lines() {
        let a: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let b: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0, 0.0]).collect();
        assert!((mean_symmetric_distance(&a, &b) - 2.0).abs() < 1e-12);
    }
}
