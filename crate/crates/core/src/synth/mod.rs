//! Parametric rib-cage phantoms with exact ground truth.
//!
//! Geometry is defined in millimeters with patient left along `+x`,
//! posterior along `+y` and superior along `+z`. Each rib is a tube around an
//! elliptic arc that leaves the spine at the posterior midline, sweeps
//! laterally and anteriorly, and descends with a per-pair tilt.

mod dataset;

pub use dataset::{generate_dataset, read_case, vary_config, write_case, CaseData, CaseEntry, DatasetManifest, Split};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::Side;
use crate::rng::{self, streams};
use crate::volume::{BinaryMask, Dims, LabelMap, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing: [f32; 3],
    pub pairs: u32,
    pub rib_radius_mm: f64,
    /// Lateral semi-axis of the widest rib arc.
    pub cage_width_mm: f64,
    /// Antero-posterior semi-axis of the widest rib arc.
    pub cage_depth_mm: f64,
    /// Size of the first pair relative to the widest.
    pub top_pair_scale: f64,
    pub pair_spacing_mm: f64,
    /// Mean downward tilt of the arcs towards anterior, radians.
    pub tilt_rad: f64,
    pub tilt_jitter_rad: f64,
    /// Arc end angle of attached ribs.
    pub arc_end_rad: f64,
    /// Arc end angle of the last `floating_pairs` pairs.
    pub floating_arc_end_rad: f64,
    pub floating_pairs: u32,
    /// Shift of the whole cage from the grid center.
    pub center_offset_mm: [f64; 3],
    pub vertebra: bool,
    pub vertebra_radius_mm: f64,
    pub scapula: bool,
    pub implant: bool,
    pub table: bool,
    pub bone_hu: [i16; 2],
    pub soft_tissue_hu: [i16; 2],
    pub implant_hu: i16,
    pub table_hu: i16,
    pub noise_sigma_hu: f64,
    pub missing_ribs: Vec<(Side, u32)>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: Dims::new(256, 256, 256),
            spacing: [1.5; 3],
            pairs: 12,
            rib_radius_mm: 3.0,
            cage_width_mm: 130.0,
            cage_depth_mm: 85.0,
            top_pair_scale: 0.45,
            pair_spacing_mm: 22.0,
            tilt_rad: 0.35,
            tilt_jitter_rad: 0.04,
            arc_end_rad: 2.4,
            floating_arc_end_rad: 1.4,
            floating_pairs: 2,
            center_offset_mm: [0.0; 3],
            vertebra: true,
            vertebra_radius_mm: 16.0,
            scapula: true,
            implant: false,
            table: true,
            bone_hu: [400, 1000],
            soft_tissue_hu: [0, 80],
            implant_hu: 3000,
            table_hu: 500,
            noise_sigma_hu: 20.0,
            missing_ribs: Vec::new(),
        }
    }
}

impl PhantomConfig {
    /// The default anatomy on a coarser 128³ grid of 3 mm voxels, with
    /// slightly thicker ribs so they stay connected at that resolution.
    pub fn desk() -> Self {
        PhantomConfig {
            dims: Dims::new(128, 128, 128),
            spacing: [3.0; 3],
            rib_radius_mm: 4.0,
            ..PhantomConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=12).contains(&self.pairs) {
            return Err(Error::invalid(format!("pairs must be in 1..=12, got {}", self.pairs)));
        }
        if self.dims.is_empty() || self.spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("phantom dims and spacing must be positive"));
        }
        let positive = [
            self.rib_radius_mm,
            self.cage_width_mm,
            self.cage_depth_mm,
            self.top_pair_scale,
            self.pair_spacing_mm,
            self.arc_end_rad,
            self.floating_arc_end_rad,
            self.vertebra_radius_mm,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("phantom radii and lengths must be positive"));
        }
        if self.bone_hu[0] > self.bone_hu[1] || self.soft_tissue_hu[0] > self.soft_tissue_hu[1] {
            return Err(Error::invalid("HU ranges must be ordered"));
        }
        if !(self.noise_sigma_hu >= 0.0) || !(self.tilt_jitter_rad >= 0.0) {
            return Err(Error::invalid("noise and jitter must be non-negative"));
        }
        if let Some((s, p)) = self.missing_ribs.iter().find(|(_, p)| !(1..=self.pairs).contains(p)) {
            return Err(Error::invalid(format!("missing rib {} {p} is not a generated pair", s.as_str())));
        }
        Ok(())
    }

    fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.dims.as_array()[k] as f64 * self.spacing[k] as f64)
    }

    fn center(&self) -> [f64; 3] {
        let e = self.extent();
        std::array::from_fn(|k| e[k] / 2.0 + self.center_offset_mm[k])
    }

    /// Size factor of a pair relative to the widest arc.
    fn pair_scale(&self, pair: u32) -> f64 {
        let t = ((pair - 1) as f64 / 6.0).min(1.0);
        let rise = self.top_pair_scale + (1.0 - self.top_pair_scale) * (1.0 - (1.0 - t).powi(2));
        rise * (1.0 - 0.03 * pair.saturating_sub(8) as f64)
    }

    /// Superior-most z of the cage, so the cage is centered vertically.
    fn top_z(&self) -> f64 {
        let span = (self.pairs - 1) as f64 * self.pair_spacing_mm;
        let drop = self.tilt_rad.tan() * 1.74 * self.cage_depth_mm;
        self.center()[2] + (span + drop) / 2.0
    }

    /// y of the posterior rib origins.
    fn spine_y(&self) -> f64 {
        self.center()[1] + 0.85 * self.cage_depth_mm
    }
}

/// Rib label in the canonical encoding `2 * (pair - 1) + side + 1`.
pub fn rib_label(side: Side, pair: u32) -> u32 {
    2 * (pair - 1) + if side == Side::Left { 1 } else { 2 }
}

pub fn rib_of_label(label: u32) -> (Side, u32) {
    let side = if label % 2 == 1 { Side::Left } else { Side::Right };
    (side, (label - 1) / 2 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibCurve {
    pub label: u32,
    pub side: Side,
    pub pair_index: u32,
    /// Generating curve in millimeters, outside the vertebra only.
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub labels: LabelMap,
    pub vertebra: BinaryMask,
    pub scapula: BinaryMask,
    pub implant: BinaryMask,
    pub table: BinaryMask,
    pub curves: Vec<RibCurve>,
    pub rib_fraction: f64,
}

struct Arc {
    side: Side,
    pair: u32,
    a: f64,
    b: f64,
    z0: f64,
    tilt: f64,
    end: f64,
}

impl Arc {
    fn at(&self, cx: f64, spine_y: f64, theta: f64) -> [f64; 3] {
        let sign = if self.side == Side::Left { 1.0 } else { -1.0 };
        let back = self.b * (1.0 - theta.cos());
        [cx + sign * self.a * theta.sin(), spine_y - back, self.z0 - self.tilt.tan() * back]
    }

    fn length_estimate(&self) -> f64 {
        (self.a.max(self.b)) * self.end
    }
}

fn draw_hu(r: &mut rng::Rng, range: [i16; 2]) -> f64 {
    if range[0] == range[1] {
        range[0] as f64
    } else {
        r.random_range(range[0] as f64..=range[1] as f64)
    }
}

struct Canvas {
    dims: Dims,
    spacing: [f64; 3],
}

impl Canvas {
    /// Calls `f(index, center_mm)` for every voxel whose center lies in the
    /// box `[lo, hi]` (millimeters), clipped to the grid.
    fn for_box(&self, lo: [f64; 3], hi: [f64; 3], mut f: impl FnMut(usize, [f64; 3])) {
        let n = self.dims.as_array();
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        for k in 0..3 {
            let first = (lo[k] / self.spacing[k] - 0.5).ceil().max(0.0);
            let last = (hi[k] / self.spacing[k] - 0.5).floor();
            if last < first || first >= n[k] as f64 {
                return;
            }
            a[k] = first as usize;
            b[k] = (last as usize).min(n[k] - 1);
        }
        for z in a[2]..=b[2] {
            for y in a[1]..=b[1] {
                for x in a[0]..=b[0] {
                    let c = [
                        (x as f64 + 0.5) * self.spacing[0],
                        (y as f64 + 0.5) * self.spacing[1],
                        (z as f64 + 0.5) * self.spacing[2],
                    ];
                    f(self.dims.index(x, y, z), c);
                }
            }
        }
    }
}

/// Renders one phantom. Identical config and seed give identical output.
pub fn generate_phantom(cfg: &PhantomConfig, seed: u64) -> Result<(Volume, PhantomTruth)> {
    cfg.validate()?;
    let dims = cfg.dims;
    let sp: [f64; 3] = cfg.spacing.map(|s| s as f64);
    let extent = cfg.extent();
    let [cx, cy, _] = cfg.center();
    let spine_y = cfg.spine_y();
    let top = cfg.top_z();
    let canvas = Canvas { dims, spacing: sp };
    let mut r = rng::stream(seed, streams::PHANTOM);

    let mut arcs = Vec::new();
    for pair in 1..=cfg.pairs {
        let s = cfg.pair_scale(pair);
        let tilt = cfg.tilt_rad + r.random_range(-1.0..=1.0) * cfg.tilt_jitter_rad;
        let floating = pair + cfg.floating_pairs > cfg.pairs;
        let end = if floating { cfg.floating_arc_end_rad } else { cfg.arc_end_rad };
        for side in [Side::Left, Side::Right] {
            arcs.push(Arc {
                side,
                pair,
                a: cfg.cage_width_mm * s,
                b: cfg.cage_depth_mm * s,
                z0: top - (pair - 1) as f64 * cfg.pair_spacing_mm,
                tilt,
                end,
            });
        }
    }
    let margin = cfg.rib_radius_mm + sp.iter().copied().fold(0.0, f64::max);
    for arc in &arcs {
        for i in 0..=64 {
            let p = arc.at(cx, spine_y, arc.end * i as f64 / 64.0);
            if (0..3).any(|k| p[k] < margin || p[k] > extent[k] - margin) {
                return Err(Error::invalid(format!(
                    "rib {} {} leaves the volume near {:?} mm",
                    arc.side.as_str(),
                    arc.pair,
                    p.map(|v| v.round())
                )));
            }
        }
    }
    let lowest = arcs
        .iter()
        .map(|a| a.at(cx, spine_y, a.end)[2])
        .fold(f64::INFINITY, f64::min);

    let mut hu = vec![-1000.0f64; dims.len()];
    let mut labels = vec![0u32; dims.len()];
    let mut vertebra = vec![false; dims.len()];
    let mut scapula = vec![false; dims.len()];
    let mut implant = vec![false; dims.len()];
    let mut table = vec![false; dims.len()];

    let body_a = cfg.cage_width_mm + 30.0;
    let body_b = cfg.cage_depth_mm + 30.0;
    let tissue = draw_hu(&mut r, cfg.soft_tissue_hu);
    canvas.for_box([cx - body_a, cy - body_b, 0.0], [cx + body_a, cy + body_b, extent[2]], |i, c| {
        if ((c[0] - cx) / body_a).powi(2) + ((c[1] - cy) / body_b).powi(2) <= 1.0 {
            hu[i] = tissue;
        }
    });

    if cfg.table {
        let y0 = cy + body_b + 12.0;
        canvas.for_box([cx - body_a - 10.0, y0, 0.0], [cx + body_a + 10.0, y0 + 12.0, extent[2]], |i, _| {
            hu[i] = cfg.table_hu as f64;
            table[i] = true;
        });
    }

    if cfg.scapula {
        let (ha, hb, hc) = (30.0, 4.0, 50.0);
        let zc = top - 2.5 * cfg.pair_spacing_mm;
        for sign in [1.0, -1.0] {
            let c0 = [cx + sign * 0.55 * cfg.cage_width_mm, spine_y + 16.0, zc];
            let v = draw_hu(&mut r, cfg.bone_hu);
            canvas.for_box([c0[0] - ha, c0[1] - hb, c0[2] - hc], [c0[0] + ha, c0[1] + hb, c0[2] + hc], |i, c| {
                let q = ((c[0] - c0[0]) / ha).powi(2) + ((c[1] - c0[1]) / hb).powi(2) + ((c[2] - c0[2]) / hc).powi(2);
                if q <= 1.0 {
                    hu[i] = v;
                    scapula[i] = true;
                }
            });
        }
    }

    let rr = cfg.rib_radius_mm;
    let step = 0.25 * sp.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rendered = Vec::new();
    for arc in &arcs {
        let v = draw_hu(&mut r, cfg.bone_hu);
        if cfg.missing_ribs.contains(&(arc.side, arc.pair)) {
            continue;
        }
        let label = rib_label(arc.side, arc.pair);
        let n = (arc.length_estimate() / step).ceil() as usize + 1;
        for s in 0..=n {
            let p = arc.at(cx, spine_y, arc.end * s as f64 / n as f64);
            canvas.for_box(p.map(|v| v - rr), p.map(|v| v + rr), |i, c| {
                if (0..3).map(|k| (c[k] - p[k]).powi(2)).sum::<f64>() <= rr * rr {
                    hu[i] = v;
                    labels[i] = label;
                }
            });
        }
        rendered.push(arc);
    }

    let rv = cfg.vertebra_radius_mm;
    let column_radius = |z: f64| rv * (1.0 + 0.15 * (std::f64::consts::TAU * (z - top) / cfg.pair_spacing_mm).sin());
    let in_column = |c: [f64; 3]| {
        cfg.vertebra
            && c[2] >= lowest - 20.0
            && c[2] <= top + 25.0
            && (c[0] - cx).powi(2) + (c[1] - spine_y).powi(2) <= column_radius(c[2]).powi(2)
    };
    if cfg.vertebra {
        let v = draw_hu(&mut r, cfg.bone_hu);
        let rmax = 1.15 * rv;
        canvas.for_box([cx - rmax, spine_y - rmax, lowest - 20.0], [cx + rmax, spine_y + rmax, top + 25.0], |i, c| {
            if in_column(c) {
                hu[i] = v;
                labels[i] = 0;
                vertebra[i] = true;
            }
        });
    }

    if cfg.implant {
        let pair = 4.min(cfg.pairs);
        let arc = arcs.iter().find(|a| a.pair == pair && a.side == Side::Left).expect("pair exists");
        let e = arc.at(cx, spine_y, arc.end);
        canvas.for_box([e[0] - 10.0, e[1] - rr - 12.0, e[2] - 15.0], [e[0] + 10.0, e[1] - rr + 1.5, e[2] + 15.0], |i, _| {
            if labels[i] == 0 && !vertebra[i] {
                hu[i] = cfg.implant_hu as f64;
                implant[i] = true;
                scapula[i] = false;
            }
        });
    }

    if cfg.noise_sigma_hu > 0.0 {
        let mut nr = rng::stream(seed, streams::NOISE);
        let normal = Normal::new(0.0, cfg.noise_sigma_hu).expect("sigma validated");
        hu.iter_mut().for_each(|v| *v += normal.sample(&mut nr));
    }
    let data: Vec<i16> = hu
        .iter()
        .map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect();

    let curve_step = 0.5;
    let curves = rendered
        .iter()
        .map(|arc| {
            let n = (arc.length_estimate() / curve_step).ceil() as usize + 1;
            let points = (0..=n)
                .map(|s| arc.at(cx, spine_y, arc.end * s as f64 / n as f64))
                .filter(|p| !in_column(*p))
                .collect();
            RibCurve {
                label: rib_label(arc.side, arc.pair),
                side: arc.side,
                pair_index: arc.pair,
                points,
            }
        })
        .collect();

    let rib_voxels = labels.iter().filter(|&&l| l != 0).count();
    let grid = |d: Vec<bool>| BinaryMask::from_vec(dims, cfg.spacing, d);
    let truth = PhantomTruth {
        labels: LabelMap::from_vec(dims, cfg.spacing, labels)?,
        vertebra: grid(vertebra)?,
        scapula: grid(scapula)?,
        implant: grid(implant)?,
        table: grid(table)?,
        curves,
        rib_fraction: rib_voxels as f64 / dims.len() as f64,
    };
    Ok((Volume::from_vec(dims, cfg.spacing, data)?, truth))
}
