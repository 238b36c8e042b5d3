//! Point sampling and grouping: farthest point sampling, ball query and
//! k-nearest-neighbour search. All distances are squared Euclidean in `f64`
//! and every tie resolves to the lowest index.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[inline]
pub fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

/// Start index of a seeded farthest point sampling run over `n` points.
pub fn fps_start(n: usize, seed: u64) -> usize {
    rng::stream(seed, streams::FPS_START).random_range(0..n)
}

pub fn farthest_point_sample(coords: &[[f32; 3]], m: usize, seed: u64) -> Result<Vec<usize>> {
    if coords.is_empty() {
        return Err(Error::invalid("farthest point sampling on an empty set"));
    }
    farthest_point_sample_from(coords, m, fps_start(coords.len(), seed))
}

/// Points per block in farthest point sampling.
const FPS_BLOCK: usize = 64;

/// Greedy max-min selection starting from `start`: each next index maximizes
/// the squared distance to the already selected set.
///
/// Points are grouped into spatial blocks. A block whose bounding box is
/// farther from the new center than its largest current distance cannot
/// change and is skipped, so the result equals the plain quadratic scan.
pub fn farthest_point_sample_from(coords: &[[f32; 3]], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot select {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::invalid(format!("start index {start} out of {n} points")));
    }
    let blocks = FpsBlocks::new(coords);
    let mut min_d = vec![f64::INFINITY; n];
    let mut block_best: Vec<(f64, usize)> = blocks.ranges.iter().map(|r| (f64::INFINITY, blocks.order[r.start])).collect();
    let mut selected = Vec::with_capacity(m);
    let mut current = start;
    selected.push(current);
    while selected.len() < m {
        let c = coords[current];
        for (b, range) in blocks.ranges.iter().enumerate() {
            if blocks.lower_bound2(b, &c) >= block_best[b].0 {
                continue;
            }
            let mut best = (-1.0f64, usize::MAX);
            for &i in &blocks.order[range.clone()] {
                let d = dist2(&coords[i], &c);
                let md = &mut min_d[i];
                if d < *md {
                    *md = d;
                }
                if *md > best.0 {
                    best = (*md, i);
                }
            }
            block_best[b] = best;
        }
        // largest distance, lowest index on ties
        current = block_best
            .iter()
            .fold((-1.0f64, usize::MAX), |acc, &(d, i)| if d > acc.0 || (d == acc.0 && i < acc.1) { (d, i) } else { acc })
            .1;
        selected.push(current);
    }
    Ok(selected)
}

/// Spatially coherent blocks of point indices, ascending within each block.
struct FpsBlocks {
    order: Vec<usize>,
    ranges: Vec<std::ops::Range<usize>>,
    lo: Vec<[f64; 3]>,
    hi: Vec<[f64; 3]>,
}

impl FpsBlocks {
    fn new(coords: &[[f32; 3]]) -> Self {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        let mut ranges = Vec::new();
        split_blocks(coords, &mut order, 0, &mut ranges);
        for r in &ranges {
            order[r.clone()].sort_unstable();
        }
        let mut lo = Vec::with_capacity(ranges.len());
        let mut hi = Vec::with_capacity(ranges.len());
        for r in &ranges {
            let mut a = [f64::INFINITY; 3];
            let mut b = [f64::NEG_INFINITY; 3];
            for &i in &order[r.clone()] {
                for k in 0..3 {
                    a[k] = a[k].min(coords[i][k] as f64);
                    b[k] = b[k].max(coords[i][k] as f64);
                }
            }
            lo.push(a);
            hi.push(b);
        }
        FpsBlocks { order, ranges, lo, hi }
    }

    /// Squared distance from `c` to block `b`'s box; never above the
    /// `dist2` of any member since rounding is monotone.
    fn lower_bound2(&self, b: usize, c: &[f32; 3]) -> f64 {
        let mut s = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            let v = ck as f64;
            let gap = if v < self.lo[b][k] {
                self.lo[b][k] - v
            } else if v > self.hi[b][k] {
                v - self.hi[b][k]
            } else {
                0.0
            };
            s += gap * gap;
        }
        s
    }
}

/// Recursive median split along the widest axis down to `FPS_BLOCK` points.
fn split_blocks(coords: &[[f32; 3]], idx: &mut [usize], offset: usize, out: &mut Vec<std::ops::Range<usize>>) {
    if idx.len() <= FPS_BLOCK {
        out.push(offset..offset + idx.len());
        return;
    }
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for &i in idx.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(coords[i][k]);
            hi[k] = hi[k].max(coords[i][k]);
        }
    }
    let axis = (0..3).fold(0, |a, k| if hi[k] - lo[k] > hi[a] - lo[a] { k } else { a });
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| coords[a][axis].total_cmp(&coords[b][axis]).then(a.cmp(&b)));
    let (left, right) = idx.split_at_mut(mid);
    split_blocks(coords, left, offset, out);
    split_blocks(coords, right, offset + mid, out);
}

/// Uniform hash grid over a point set for fixed-radius queries.
struct Grid {
    cell: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl Grid {
    fn build(coords: &[[f32; 3]], cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in coords {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] as f64);
                hi[k] = hi[k].max(p[k] as f64);
            }
        }
        let limit = 256usize;
        let mut cell = cell.max(1e-12);
        while (0..3).map(|k| ((hi[k] - lo[k]) / cell) as usize + 1).product::<usize>() > limit * limit * limit {
            cell *= 2.0;
        }
        let dims: [usize; 3] = std::array::from_fn(|k| ((hi[k] - lo[k]) / cell) as usize + 1);
        let grid = Grid {
            cell,
            origin: lo,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let ncell = dims.iter().product::<usize>();
        let mut counts = vec![0u32; ncell + 1];
        let keys: Vec<usize> = coords.iter().map(|p| grid.key(p)).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; coords.len()];
        // ascending point order within each cell
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        Grid {
            starts: counts,
            items,
            ..grid
        }
    }

    fn cell_of(&self, v: f64, k: usize) -> i64 {
        ((v - self.origin[k]) / self.cell).floor() as i64
    }

    fn key(&self, p: &[f32; 3]) -> usize {
        let c: [usize; 3] = std::array::from_fn(|k| self.cell_of(p[k] as f64, k).clamp(0, self.dims[k] as i64 - 1) as usize);
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Calls `f` on every point in the cells at Chebyshev distance exactly
    /// `shell` from cell `home`.
    fn visit_shell(&self, home: [i64; 3], shell: i64, mut f: impl FnMut(usize)) {
        let lo: [i64; 3] = std::array::from_fn(|a| (home[a] - shell).max(0));
        let hi: [i64; 3] = std::array::from_fn(|a| (home[a] + shell).min(self.dims[a] as i64 - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let inner = (z - home[2]).abs() < shell && (y - home[1]).abs() < shell;
                let mut visit = |x: i64| {
                    let key = x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize);
                    for &i in &self.items[self.starts[key] as usize..self.starts[key + 1] as usize] {
                        f(i as usize);
                    }
                };
                if inner {
                    // interior rows only touch the two x faces of the shell
                    for x in [home[0] - shell, home[0] + shell] {
                        if (0..self.dims[0] as i64).contains(&x) {
                            visit(x);
                        }
                    }
                } else {
                    (lo[0]..=hi[0]).for_each(&mut visit);
                }
            }
        }
    }

    /// Whether the cube of cells within `shell` of `home` covers the grid.
    fn shell_covers_all(&self, home: [i64; 3], shell: i64) -> bool {
        (0..3).all(|a| home[a] - shell <= 0 && home[a] + shell >= self.dims[a] as i64 - 1)
    }

    /// Calls `f` on every point index in cells overlapping the cube of
    /// half-width `r` around `q`.
    fn visit(&self, q: &[f32; 3], r: f64, mut f: impl FnMut(usize)) {
        let lo: [i64; 3] = std::array::from_fn(|k| self.cell_of(q[k] as f64 - r, k).max(0));
        let hi: [i64; 3] = std::array::from_fn(|k| self.cell_of(q[k] as f64 + r, k).min(self.dims[k] as i64 - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let key = x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize);
                    for &i in &self.items[self.starts[key] as usize..self.starts[key + 1] as usize] {
                        f(i as usize);
                    }
                }
            }
        }
    }
}

/// For every center, up to `nsample` indices of points within `radius`
/// (squared distance `<= radius²`) in ascending index order. Short groups
/// repeat their first hit; a center with no hits uses its nearest point.
/// Returns `centers.len() * nsample` indices.
pub fn ball_query(centers: &[[f32; 3]], coords: &[[f32; 3]], radius: f64, nsample: usize) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
    }
    if nsample == 0 {
        return Err(Error::invalid("nsample must be positive"));
    }
    if coords.is_empty() {
        return Err(Error::invalid("ball query over an empty set"));
    }
    let r2 = radius * radius;
    let grid = Grid::build(coords, radius);
    let mut out = Vec::with_capacity(centers.len() * nsample);
    let mut hits = Vec::new();
    for c in centers {
        hits.clear();
        grid.visit(c, radius, |i| {
            if dist2(&coords[i], c) <= r2 {
                hits.push(i);
            }
        });
        hits.sort_unstable();
        if hits.is_empty() {
            hits.push(nearest(c, coords));
        }
        let take = hits.len().min(nsample);
        out.extend_from_slice(&hits[..take]);
        for _ in take..nsample {
            out.push(hits[0]);
        }
    }
    Ok(out)
}

fn nearest(q: &[f32; 3], coords: &[[f32; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in coords.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// The `k` nearest sources of every target, nearest first, as
/// `(indices, squared distances)` of length `targets.len() * k'` where
/// `k' = min(k, sources.len())`. Equal distances order by index.
///
/// Sources are bucketed in a grid searched in growing shells around each
/// target until no unvisited cell can hold a point at or below the current
/// k-th distance, so the result equals an exhaustive scan.
pub fn knn(targets: &[[f32; 3]], sources: &[[f32; 3]], k: usize) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    if sources.is_empty() || k == 0 {
        return Err(Error::invalid("knn needs a source point and k >= 1"));
    }
    let k = k.min(sources.len());
    let grid = Grid::build(sources, knn_cell(sources, k));
    let mut idx = Vec::with_capacity(targets.len() * k);
    let mut dist = Vec::with_capacity(targets.len() * k);
    let mut best_i = vec![0usize; k];
    let mut best_d = vec![f64::INFINITY; k];
    for t in targets {
        best_d.iter_mut().for_each(|d| *d = f64::INFINITY);
        best_i.iter_mut().for_each(|i| *i = usize::MAX);
        let home: [i64; 3] = std::array::from_fn(|a| grid.cell_of(t[a] as f64, a));
        // shells nearer than the grid are empty
        let mut shell = (0..3).map(|a| (-home[a]).max(home[a] - (grid.dims[a] as i64 - 1)).max(0)).max().unwrap_or(0);
        loop {
            grid.visit_shell(home, shell, |i| offer(&mut best_d, &mut best_i, dist2(&sources[i], t), i));
            if grid.shell_covers_all(home, shell) {
                break;
            }
            // nearest point any unvisited cell could hold
            let reach = (0..3)
                .map(|a| {
                    let v = t[a] as f64;
                    let lo = grid.origin[a] + (home[a] - shell) as f64 * grid.cell;
                    let hi = grid.origin[a] + (home[a] + shell + 1) as f64 * grid.cell;
                    (v - lo).min(hi - v)
                })
                .fold(f64::INFINITY, f64::min)
                .max(0.0);
            // strict, with a relative margin for rounding in the bound
            if best_d[k - 1] < reach * reach * (1.0 - 1e-9) {
                break;
            }
            shell += 1;
        }
        idx.extend_from_slice(&best_i);
        dist.extend_from_slice(&best_d);
    }
    Ok((idx, dist, k))
}

/// Inserts `(d, i)` into the sorted k-best lists when it ranks below the last.
fn offer(best_d: &mut [f64], best_i: &mut [usize], d: f64, i: usize) {
    let k = best_d.len();
    if (d, i) < (best_d[k - 1], best_i[k - 1]) {
        let mut pos = k - 1;
        while pos > 0 && (best_d[pos - 1], best_i[pos - 1]) > (d, i) {
            best_d[pos] = best_d[pos - 1];
            best_i[pos] = best_i[pos - 1];
            pos -= 1;
        }
        best_d[pos] = d;
        best_i[pos] = i;
    }
}

/// Grid cell for kNN: about `2k` sources per occupied cell on average.
fn knn_cell(sources: &[[f32; 3]], k: usize) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in sources {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-6);
    let cells_per_axis = ((sources.len() as f64 / (2.0 * k as f64)).sqrt()).max(1.0);
    extent / cells_per_axis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f32]) -> Vec<[f32; 3]> {
        xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
    }

    #[test]
    fn fps_collinear_by_hand() {
        let pts = line(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(farthest_point_sample_from(&pts, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(farthest_point_sample_from(&pts, 3, 0).unwrap(), vec![0, 3, 2]);
        assert_eq!(farthest_point_sample_from(&pts, 1, 2).unwrap(), vec![2]);
        let mut all = farthest_point_sample_from(&pts, 4, 1).unwrap();
        assert_eq!(all[0], 1);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(farthest_point_sample_from(&pts, 5, 0).is_err());
    }

    #[test]
    fn fps_seeded_start_is_deterministic() {
        let pts = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = farthest_point_sample(&pts, 1, 42).unwrap();
        assert_eq!(a, vec![fps_start(6, 42)]);
        assert_eq!(a, farthest_point_sample(&pts, 1, 42).unwrap());
    }

    #[test]
    fn ball_query_on_unit_grid() {
        let mut pts = Vec::new();
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    pts.push([x as f32, y as f32, z as f32]);
                }
            }
        }
        let g = ball_query(&[[1.0, 1.0, 1.0]], &pts, 1.0, 16).unwrap();
        // brute force: indices at distance <= 1 from the center, ascending
        let want: Vec<usize> = (0..27).filter(|&i| dist2(&pts[i], &[1.0, 1.0, 1.0]) <= 1.0).collect();
        assert_eq!(want, vec![4, 10, 12, 13, 14, 16, 22]);
        assert_eq!(&g[..7], &want[..]);
        assert!(g[7..].iter().all(|&i| i == 4));
    }

    #[test]
    fn ball_query_pads_from_nearest_when_empty() {
        let pts = line(&[0.0, 5.0, 10.0]);
        let g = ball_query(&[[4.0, 0.0, 0.0], [9.0, 0.0, 0.0]], &pts, 0.5, 3).unwrap();
        assert_eq!(g, vec![1, 1, 1, 2, 2, 2]);
        assert!(ball_query(&pts, &pts, 0.0, 3).is_err());
    }

    #[test]
    fn knn_orders_and_breaks_ties_low() {
        let src = line(&[0.0, 2.0, -2.0, 5.0]);
        let (idx, d, k) = knn(&line(&[0.0, 1.0]), &src, 3).unwrap();
        assert_eq!(k, 3);
        assert_eq!(&idx[..3], &[0, 1, 2]);
        assert_eq!(&idx[3..], &[0, 1, 2]);
        assert_eq!(&d[3..], &[1.0, 1.0, 9.0]);
        let (idx, _, k) = knn(&line(&[0.0]), &src[..2], 3).unwrap();
        assert_eq!((idx, k), (vec![0, 1], 2));
    }

    fn exhaustive_fps(coords: &[[f32; 3]], m: usize, start: usize) -> Vec<usize> {
        let mut min_d = vec![f64::INFINITY; coords.len()];
        let mut out = vec![start];
        while out.len() < m {
            let c = coords[*out.last().unwrap()];
            let mut best = (-1.0, 0);
            for (i, md) in min_d.iter_mut().enumerate() {
                *md = md.min(dist2(&coords[i], &c));
                if *md > best.0 {
                    best = (*md, i);
                }
            }
            out.push(best.1);
        }
        out
    }

    fn exhaustive_knn(t: &[f32; 3], src: &[[f32; 3]], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = src.iter().enumerate().map(|(i, p)| (dist2(p, t), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    /// Random clouds, snapped to a coarse lattice in half the cases so
    /// that distance ties are common.
    fn cloud(n: usize, seed: u64, spread: f32) -> Vec<[f32; 3]> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let snap = seed.is_multiple_of(2);
        (0..n)
            .map(|_| {
                std::array::from_fn(|_| {
                    let v: f32 = rng.random_range(-spread..spread);
                    if snap { v.round() } else { v }
                })
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn fps_matches_exhaustive_scan(n in 1usize..400, seed in 0u64..1000, frac in 0.0f64..1.0) {
            let pts = cloud(n, seed, 4.0);
            let m = 1 + ((n - 1) as f64 * frac) as usize;
            let start = seed as usize % n;
            proptest::prop_assert_eq!(farthest_point_sample_from(&pts, m, start).unwrap(), exhaustive_fps(&pts, m, start));
        }

        #[test]
        fn knn_matches_exhaustive_scan(ns in 1usize..300, nt in 1usize..40, k in 1usize..8, seed in 0u64..1000) {
            let src = cloud(ns, seed, 3.0);
            // targets partly outside the source bounds
            let tgt = cloud(nt, seed + 1, 6.0);
            let (idx, d, kk) = knn(&tgt, &src, k).unwrap();
            proptest::prop_assert_eq!(kk, k.min(ns));
            for (j, t) in tgt.iter().enumerate() {
                let want = exhaustive_knn(t, &src, kk);
                let got: Vec<(f64, usize)> = (0..kk).map(|r| (d[j * kk + r], idx[j * kk + r])).collect();
                proptest::prop_assert_eq!(got, want);
            }
        }
    }
}
