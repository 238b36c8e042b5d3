//! Wall-clock timing of pipeline stages and the dense-convolution reference.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::Volume;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    /// Seconds per timed run, warm-up excluded.
    pub samples: Vec<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub points: Option<usize>,
    pub voxels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repeats: usize,
    pub threads: usize,
    pub stages: Vec<StageTiming>,
    /// Extra fields such as speed ratios.
    #[serde(default)]
    pub derived: serde_json::Map<String, serde_json::Value>,
}

impl TimingReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub struct Stage<'a> {
    pub name: String,
    pub points: Option<usize>,
    pub voxels: Option<usize>,
    pub run: Box<dyn FnMut() + 'a>,
}

impl<'a> Stage<'a> {
    pub fn new(name: impl Into<String>, run: impl FnMut() + 'a) -> Self {
        Stage {
            name: name.into(),
            points: None,
            voxels: None,
            run: Box::new(run),
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs each stage once untimed, then `repeats` timed runs.
pub fn bench(stages: Vec<Stage<'_>>, repeats: usize) -> Result<TimingReport> {
    if repeats < 3 {
        return Err(Error::invalid(format!("bench needs at least 3 repeats, got {repeats}")));
    }
    let mut out = Vec::with_capacity(stages.len());
    for mut s in stages {
        (s.run)();
        let samples: Vec<f64> = (0..repeats)
            .map(|_| {
                let t = Instant::now();
                (s.run)();
                t.elapsed().as_secs_f64()
            })
            .collect();
        log::info!("{}: median {:.4}s over {repeats} runs", s.name, median(&samples));
        out.push(StageTiming {
            name: s.name,
            median: median(&samples),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(0.0, f64::max),
            samples,
            points: s.points,
            voxels: s.voxels,
        });
    }
    Ok(TimingReport {
        repeats,
        threads: 1,
        stages: out,
        derived: Default::default(),
    })
}

/// Two stacked 3×3×3 convolutions (1→C then C→C channels, zero padding,
/// ReLU) swept over a whole volume: the cost of one dense voxel layer pair.
pub struct DenseBaseline {
    pub channels: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

const TAPS: usize = 27;

impl DenseBaseline {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let mut draw = |n: usize, fan: usize| -> Vec<f32> {
            let b = (6.0 / fan as f32).sqrt();
            (0..n).map(|_| r.random_range(-b..b)).collect()
        };
        DenseBaseline {
            channels,
            w1: draw(TAPS * channels, TAPS),
            b1: vec![0.0; channels],
            w2: draw(TAPS * channels * channels, TAPS * channels),
            b2: vec![0.0; channels],
        }
    }

    /// Runs both layers slab by slab (the first layer is kept for three
    /// slices at a time) and returns the sum of the final activations.
    pub fn run(&self, v: &Volume) -> f64 {
        let d = v.dims();
        let (nx, ny, nz) = (d.nx, d.ny, d.nz);
        let c = self.channels;
        let slice = nx * ny;
        let input: Vec<f32> = v.data().iter().map(|&h| h as f32 / 1000.0).collect();
        // ring of first-layer slices, channel-last
        let mut ring: Vec<Vec<f32>> = vec![vec![0.0; slice * c]; 3];
        let mut ring_z: [isize; 3] = [-10; 3];
        let mut out = vec![0.0f32; slice * c];
        let mut total = 0.0f64;

        let layer1 = |z: usize, dst: &mut [f32]| {
            for y in 0..ny {
                for x in 0..nx {
                    let o = &mut dst[(y * nx + x) * c..(y * nx + x + 1) * c];
                    o.copy_from_slice(&self.b1);
                    let mut tap = 0;
                    for dz in -1isize..=1 {
                        for dy in -1isize..=1 {
                            for dx in -1isize..=1 {
                                let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                                if xx >= 0 && yy >= 0 && zz >= 0 && (xx as usize) < nx && (yy as usize) < ny && (zz as usize) < nz {
                                    let val = input[xx as usize + nx * (yy as usize + ny * zz as usize)];
                                    let w = &self.w1[tap * c..(tap + 1) * c];
                                    for k in 0..c {
                                        o[k] += w[k] * val;
                                    }
                                }
                                tap += 1;
                            }
                        }
                    }
                    o.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        };

        for z in 0..nz {
            for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                let slot = zz % 3;
                if ring_z[slot] != zz as isize {
                    layer1(zz, &mut ring[slot]);
                    ring_z[slot] = zz as isize;
                }
            }
            for y in 0..ny {
                for x in 0..nx {
                    let o = &mut out[(y * nx + x) * c..(y * nx + x + 1) * c];
                    o.copy_from_slice(&self.b2);
                    let mut tap = 0;
                    for dz in -1isize..=1 {
                        let zz = z as isize + dz;
                        for dy in -1isize..=1 {
                            for dx in -1isize..=1 {
                                let (xx, yy) = (x as isize + dx, y as isize + dy);
                                if xx >= 0 && yy >= 0 && zz >= 0 && (xx as usize) < nx && (yy as usize) < ny && (zz as usize) < nz {
                                    let src = &ring[zz as usize % 3][(yy as usize * nx + xx as usize) * c..][..c];
                                    let w = &self.w2[tap * c * c..(tap + 1) * c * c];
                                    for (i, &s) in src.iter().enumerate() {
                                        let wi = &w[i * c..(i + 1) * c];
                                        for k in 0..c {
                                            o[k] += wi[k] * s;
                                        }
                                    }
                                }
                                tap += 1;
                            }
                        }
                    }
                    o.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            total += out.iter().map(|&v| v as f64).sum::<f64>();
        }
        total
    }
}

/// The dense reference with the default eight channels.
pub fn dense_conv_baseline(v: &Volume) -> f64 {
    DenseBaseline::new(8, 0).run(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn sleep_stage_median() {
        let stages = vec![Stage::new("sleep", || std::thread::sleep(std::time::Duration::from_millis(20)))];
        let r = bench(stages, 5).unwrap();
        let s = &r.stages[0];
        assert_eq!(s.samples.len(), 5);
        assert!((s.median - 0.020).abs() < 0.004, "{}", s.median);
        assert!(bench(vec![Stage::new("x", || {})], 2).is_err());
    }

    #[test]
    fn dense_baseline_matches_naive_convolution() {
        let d = Dims::new(5, 4, 3);
        let mut r = rng::stream(2, 0);
        let data: Vec<i16> = (0..d.len()).map(|_| r.random_range(-1000..1500)).collect();
        let v = Volume::from_vec(d, [1.0; 3], data).unwrap();
        let net = DenseBaseline::new(3, 4);
        let c = 3;
        let inp = |x: isize, y: isize, z: isize| -> f32 {
            if d.contains(x as i64, y as i64, z as i64) {
                v.data()[d.index(x as usize, y as usize, z as usize)] as f32 / 1000.0
            } else {
                0.0
            }
        };
        let tap = |dx: isize, dy: isize, dz: isize| ((dz + 1) * 9 + (dy + 1) * 3 + dx + 1) as usize;
        let l1 = |x: isize, y: isize, z: isize, k: usize| -> f32 {
            if !d.contains(x as i64, y as i64, z as i64) {
                return 0.0;
            }
            let mut s = 0.0;
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += net.w1[tap(dx, dy, dz) * c + k] * inp(x + dx, y + dy, z + dz);
                    }
                }
            }
            f32::max(s, 0.0)
        };
        let mut want = 0.0f64;
        for z in 0..3isize {
            for y in 0..4isize {
                for x in 0..5isize {
                    for k in 0..c {
                        let mut s = 0.0;
                        for dz in -1..=1 {
                            for dy in -1..=1 {
                                for dx in -1..=1 {
                                    for i in 0..c {
                                        s += net.w2[tap(dx, dy, dz) * c * c + i * c + k] * l1(x + dx, y + dy, z + dz, i);
                                    }
                                }
                            }
                        }
                        want += f32::max(s, 0.0) as f64;
                    }
                }
            }
        }
        let got = net.run(&v);
        assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
    }
}
