//! Exact Euclidean distance transform by separable lower-envelope passes.

use crate::volume::{BinaryMask, Dims};

/// Squared distance along one line: `f` holds squared distances accumulated
/// over previous axes (`INFINITY` where unknown), `w2` the squared spacing.
fn envelope(f: &[f64], w2: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &finite[1..] {
        loop {
            let p = v[k];
            let s = ((f[q] + w2 * (q * q) as f64) - (f[p] + w2 * (p * p) as f64)) / (2.0 * w2 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = w2 * d * d + f[p];
    }
}

/// Squared Euclidean distance from every voxel to the nearest background
/// voxel, in units scaled by `spacing`. Background voxels get 0; a grid
/// without background is infinite everywhere. Voxels beyond the grid do not
/// count as background.
pub fn distance_transform_sq(m: &BinaryMask, spacing: [f64; 3]) -> Vec<f64> {
    let dims = m.dims();
    let Dims { nx, ny, nz } = dims;
    let mut d: Vec<f64> = m.data().iter().map(|&b| if b { f64::INFINITY } else { 0.0 }).collect();
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    let axes: [(usize, usize, usize); 3] = [(nx, 1, 0), (ny, nx, 1), (nz, nx * ny, 2)];
    for &(len, stride, axis) in &axes {
        let w2 = spacing[axis] * spacing[axis];
        for start in 0..dims.len() {
            // visit each line once, from its first element
            if (start / stride) % len != 0 {
                continue;
            }
            for i in 0..len {
                line[i] = d[start + i * stride];
            }
            envelope(&line[..len], w2, &mut out[..len], &mut v, &mut z);
            for i in 0..len {
                d[start + i * stride] = out[i];
            }
        }
    }
    d
}
