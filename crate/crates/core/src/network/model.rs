//! Set-abstraction segmentation network: stacked set abstraction levels
//! (farthest point sampling, ball grouping, shared MLP, max-pool), feature
//! propagation by inverse-distance interpolation with skip connections, and a
//! pointwise classification head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::sampling::{ball_query, farthest_point_sample_from, fps_start, knn};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SAConfig {
    pub npoint: usize,
    /// Ball-query radius in normalized units.
    pub radius: f64,
    pub nsample: usize,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub sa_levels: Vec<SAConfig>,
    /// MLP widths per feature-propagation level, deepest level first.
    pub fp_levels: Vec<Vec<usize>>,
    pub num_classes: usize,
    pub fp_k: usize,
    pub fp_eps: f64,
    /// Standardize each point's hidden features over channels before the
    /// bias in every MLP layer.
    pub row_norm: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let sa = |npoint, radius, mlp: &[usize]| SAConfig {
            npoint,
            radius,
            nsample: 32,
            mlp: mlp.to_vec(),
        };
        NetworkConfig {
            sa_levels: vec![
                sa(1024, 0.1, &[64, 64, 128]),
                sa(256, 0.2, &[128, 128, 256]),
                sa(64, 0.4, &[256, 256, 512]),
            ],
            fp_levels: vec![vec![256, 256], vec![256, 128], vec![128, 128, 128]],
            num_classes: 2,
            fp_k: 3,
            fp_eps: 1e-8,
            row_norm: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// A narrower network with the same topology, roughly an order of
    /// magnitude cheaper per point.
    pub fn compact() -> Self {
        let sa = |npoint, radius, nsample, mlp: &[usize]| SAConfig {
            npoint,
            radius,
            nsample,
            mlp: mlp.to_vec(),
        };
        NetworkConfig {
            sa_levels: vec![
                sa(512, 0.1, 16, &[32, 32, 64]),
                sa(128, 0.2, 16, &[64, 64, 128]),
                sa(32, 0.4, 16, &[128, 128, 256]),
            ],
            fp_levels: vec![vec![128, 128], vec![128, 64], vec![64, 64]],
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sa_levels.is_empty() {
            return Err(Error::invalid("at least one set abstraction level is required"));
        }
        if self.fp_levels.len() != self.sa_levels.len() {
            return Err(Error::invalid(format!(
                "{} feature propagation levels for {} set abstraction levels",
                self.fp_levels.len(),
                self.sa_levels.len()
            )));
        }
        if self.num_classes < 2 || self.num_classes > u8::MAX as usize {
            return Err(Error::invalid(format!("num_classes {} out of range", self.num_classes)));
        }
        if self.fp_k == 0 || !(self.fp_eps > 0.0) {
            return Err(Error::invalid("fp_k must be >= 1 and fp_eps > 0"));
        }
        for (l, sa) in self.sa_levels.iter().enumerate() {
            if sa.npoint == 0 || sa.nsample == 0 || !(sa.radius > 0.0) || sa.mlp.is_empty() || sa.mlp.contains(&0) {
                return Err(Error::invalid(format!("invalid set abstraction level {l}: {sa:?}")));
            }
            if l > 0 && sa.npoint > self.sa_levels[l - 1].npoint {
                return Err(Error::invalid("npoint must not grow with depth"));
            }
        }
        if self.fp_levels.iter().any(|m| m.is_empty() || m.contains(&0)) {
            return Err(Error::invalid("feature propagation MLPs must be non-empty"));
        }
        Ok(())
    }

    /// Smallest point count the network accepts.
    pub fn min_points(&self) -> usize {
        self.sa_levels[0].npoint
    }

    /// `(name, shape)` of every parameter in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let push_mlp = |prefix: &str, mut inp: usize, widths: &[usize], out: &mut Vec<(String, Vec<usize>)>| {
            for (j, &w) in widths.iter().enumerate() {
                out.push((format!("{prefix}.{j}.weight"), vec![inp, w]));
                out.push((format!("{prefix}.{j}.bias"), vec![w]));
                out.push((format!("{prefix}.{j}.scale"), vec![w]));
                inp = w;
            }
        };
        let mut feat = vec![3usize]; // level-0 skip features are the coordinates
        let mut prev: Option<usize> = None;
        for (l, sa) in self.sa_levels.iter().enumerate() {
            // level 0 sees the members' absolute coordinates next to the offsets
            let inp = 3 + prev.unwrap_or(3);
            push_mlp(&format!("sa{l}"), inp, &sa.mlp, &mut out);
            let c = *sa.mlp.last().unwrap();
            feat.push(c);
            prev = Some(c);
        }
        let levels = self.sa_levels.len();
        let mut carried = feat[levels];
        for (f, widths) in self.fp_levels.iter().enumerate() {
            let target = levels - 1 - f;
            push_mlp(&format!("fp{f}"), carried + feat[target], widths, &mut out);
            carried = *widths.last().unwrap();
        }
        out.push(("head.weight".into(), vec![carried, self.num_classes]));
        out.push(("head.bias".into(), vec![self.num_classes]));
        out
    }
}

/// Named network weights plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetworkConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
    pub optimizer: Option<AdamState>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights `U(±sqrt(6 / fan_in))`, zero biases,
    /// unit scales.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, streams::INIT);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with(".weight") {
                let bound = (6.0 / shape[0] as f64).sqrt();
                (0..n).map(|_| r.random_range(-bound..bound) as f32).collect()
            } else if name.ends_with(".scale") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ModelParams {
            config: config.clone(),
            names,
            tensors,
            optimizer: None,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.param_shapes();
        if shapes.len() != self.tensors.len() || self.names.len() != self.tensors.len() {
            return Err(Error::DimMismatch("parameter count does not match the config".into()));
        }
        for ((name, shape), (n, t)) in shapes.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::DimMismatch(format!("parameter {n} {:?} does not match {name} {shape:?}", t.shape())));
            }
        }
        if let Some(opt) = &self.optimizer {
            opt.check_against(&self.tensors)?;
        }
        Ok(())
    }
}

/// Index structure of one set abstraction level.
#[derive(Debug, Clone)]
pub struct SaGeometry {
    /// Selected centers, as indices into the previous level.
    pub centers: Vec<usize>,
    pub coords: Vec<[f32; 3]>,
    /// `npoint * nsample` member indices into the previous level.
    pub groups: Vec<usize>,
    /// Member offsets from their center divided by the ball radius.
    pub local: Vec<[f64; 3]>,
}

/// Interpolation from one level onto the next finer one.
#[derive(Debug, Clone)]
pub struct FpGeometry {
    pub k: usize,
    pub idx: Vec<usize>,
    pub weights: Vec<f64>,
}

/// All coordinate-derived indices of a forward pass. They depend only on the
/// input coordinates and the config, never on weights.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub points: Vec<[f32; 3]>,
    pub levels: Vec<SaGeometry>,
    /// `fp[l]` maps level `l + 1` features onto level `l` centroids.
    pub fp: Vec<FpGeometry>,
    /// First-level centroids onto the input points; absent for coarse-only
    /// geometry.
    pub fine: Option<FpGeometry>,
}

pub fn interpolation(targets: &[[f32; 3]], sources: &[[f32; 3]], k: usize, eps: f64) -> Result<FpGeometry> {
    let (idx, d2, k) = knn(targets, sources, k)?;
    let mut weights = Vec::with_capacity(idx.len());
    for row in d2.chunks_exact(k) {
        let w: Vec<f64> = row.iter().map(|d| 1.0 / (d.sqrt() + eps)).collect();
        let total: f64 = w.iter().sum();
        weights.extend(w.iter().map(|v| v / total));
    }
    Ok(FpGeometry { k, idx, weights })
}

impl Geometry {
    /// Level-0 farthest point sampling starts at `start` when given, else at
    /// an index drawn from the config seed.
    pub fn build(points: &[[f32; 3]], config: &NetworkConfig, start: Option<usize>) -> Result<Self> {
        Self::build_coarse(points, config, start).and_then(|mut g| {
            g.fine = Some(interpolation(points, &g.levels[0].coords, config.fp_k, config.fp_eps)?);
            Ok(g)
        })
    }

    /// Everything except the interpolation onto the input points.
    pub fn build_coarse(points: &[[f32; 3]], config: &NetworkConfig, start: Option<usize>) -> Result<Self> {
        config.validate()?;
        if points.len() < config.min_points() {
            return Err(Error::invalid(format!(
                "{} points is fewer than the first level's {} centroids",
                points.len(),
                config.min_points()
            )));
        }
        let mut levels: Vec<SaGeometry> = Vec::new();
        for (l, sa) in config.sa_levels.iter().enumerate() {
            let prev: &[[f32; 3]] = if l == 0 { points } else { &levels[l - 1].coords };
            let s = match (l, start) {
                (0, Some(s)) => s,
                _ => fps_start(prev.len(), rng::derive(config.seed, l as u64)),
            };
            let centers = farthest_point_sample_from(prev, sa.npoint, s)?;
            let coords: Vec<[f32; 3]> = centers.iter().map(|&i| prev[i]).collect();
            let groups = ball_query(&coords, prev, sa.radius, sa.nsample)?;
            let local = groups
                .iter()
                .enumerate()
                .map(|(g, &i)| {
                    let c = coords[g / sa.nsample];
                    let p = prev[i];
                    std::array::from_fn(|k| (p[k] as f64 - c[k] as f64) / sa.radius)
                })
                .collect();
            levels.push(SaGeometry {
                centers,
                coords,
                groups,
                local,
            });
        }
        let mut fp = Vec::new();
        for l in 1..levels.len() {
            fp.push(interpolation(&levels[l - 1].coords, &levels[l].coords, config.fp_k, config.fp_eps)?);
        }
        Ok(Geometry {
            points: points.to_vec(),
            levels,
            fp,
            fine: None,
        })
    }
}

/// Parameter variables of a model loaded onto a tape.
pub struct BoundParams {
    pub vars: Vec<Var>,
    names: Vec<String>,
}

impl BoundParams {
    pub fn bind<T: Real>(tape: &mut Tape<T>, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| {
                let v = t.cast::<T>();
                if trainable {
                    tape.param(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        BoundParams {
            vars,
            names: params.names.clone(),
        }
    }

    pub fn bind_exact<T: Real>(tape: &mut Tape<T>, names: &[String], tensors: &[Tensor<T>]) -> Self {
        BoundParams {
            vars: tensors.iter().map(|t| tape.param(t.clone())).collect(),
            names: names.to_vec(),
        }
    }

    fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }
}

fn mlp<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &NetworkConfig, prefix: &str, widths: usize, mut x: Var) -> Result<Var> {
    for j in 0..widths {
        let w = p.get(&format!("{prefix}.{j}.weight"));
        let b = p.get(&format!("{prefix}.{j}.bias"));
        let s = p.get(&format!("{prefix}.{j}.scale"));
        x = if cfg.row_norm {
            tape.dense_normed(x, w, Some(b), Some(s), true)?
        } else {
            tape.dense(x, w, Some(b), Some(s), true)?
        };
    }
    Ok(x)
}

fn to_u32(idx: &[usize]) -> Vec<u32> {
    idx.iter().map(|&i| i as u32).collect()
}

fn coords_tensor<T: Real>(pts: &[[f32; 3]]) -> Tensor<T> {
    Tensor::matrix(pts.len(), 3, pts.iter().flatten().map(|&v| T::from_f64(v as f64)).collect())
}

/// Encoder plus all but the last decoder level. Returns the features of
/// level 1 (one row per first-level centroid).
pub fn forward_coarse<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &NetworkConfig, geo: &Geometry) -> Result<Var> {
    let mut feats: Vec<Var> = Vec::new();
    for (l, (sa, lg)) in cfg.sa_levels.iter().zip(&geo.levels).enumerate() {
        let local = Tensor::matrix(
            lg.local.len(),
            3,
            lg.local.iter().flatten().map(|&v| T::from_f64(v)).collect(),
        );
        let local = tape.constant(local);
        let prev = match feats.last() {
            Some(&prev) => prev,
            None => tape.constant(coords_tensor(&geo.points)),
        };
        let grouped = tape.gather(prev, to_u32(&lg.groups))?;
        let input = tape.concat(local, grouped)?;
        let h = mlp(tape, p, cfg, &format!("sa{l}"), sa.mlp.len(), input)?;
        feats.push(tape.max_pool(h, sa.nsample)?);
    }
    let levels = cfg.sa_levels.len();
    let mut carried = feats[levels - 1];
    for f in 0..levels - 1 {
        let target = levels - 2 - f;
        let fpg = &geo.fp[target];
        let interp = tape.interpolate(
            carried,
            fpg.k,
            to_u32(&fpg.idx),
            fpg.weights.iter().map(|&w| T::from_f64(w)).collect(),
        )?;
        let x = tape.concat(interp, feats[target])?;
        carried = mlp(tape, p, cfg, &format!("fp{f}"), cfg.fp_levels[f].len(), x)?;
    }
    Ok(carried)
}

/// Last decoder level and head for a set of target points: logits
/// `targets.len() × num_classes`.
pub fn forward_fine<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &NetworkConfig,
    level1: Var,
    targets: &[[f32; 3]],
    fpg: &FpGeometry,
) -> Result<Var> {
    let f = cfg.fp_levels.len() - 1;
    let interp = tape.interpolate(
        level1,
        fpg.k,
        to_u32(&fpg.idx),
        fpg.weights.iter().map(|&w| T::from_f64(w)).collect(),
    )?;
    let xyz = tape.constant(coords_tensor(targets));
    let x = tape.concat(interp, xyz)?;
    let h = mlp(tape, p, cfg, &format!("fp{f}"), cfg.fp_levels[f].len(), x)?;
    tape.dense(h, p.get("head.weight"), Some(p.get("head.bias")), None, false)
}

/// Full forward pass: logits `N × num_classes` for the geometry's points.
pub fn forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &NetworkConfig, geo: &Geometry) -> Result<Var> {
    let level1 = forward_coarse(tape, p, cfg, geo)?;
    let fine = geo
        .fine
        .as_ref()
        .ok_or_else(|| Error::invalid("geometry has no interpolation onto the input points"))?;
    forward_fine(tape, p, cfg, level1, &geo.points, fine)
}

/// Logits for a batch `B × N × 3` of already normalized point sets.
pub fn forward_batch(params: &ModelParams, batch: &[Vec<[f32; 3]>]) -> Result<Vec<Tensor<f32>>> {
    params.validate()?;
    batch
        .iter()
        .map(|pts| {
            let geo = Geometry::build(pts, &params.config, None)?;
            let mut tape = Tape::<f32>::inference();
            let bound = BoundParams::bind(&mut tape, params, false);
            let logits = forward(&mut tape, &bound, &params.config, &geo)?;
            Ok(tape.value(logits).clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> NetworkConfig {
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
            seed: 5,
        }
    }

    fn cloud(n: usize, seed: u64) -> Vec<[f32; 3]> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| std::array::from_fn(|_| r.random_range(-1.0f32..1.0))).collect()
    }

    #[test]
    fn default_shapes_chain() {
        let cfg = NetworkConfig::default();
        let shapes = cfg.param_shapes();
        assert_eq!(shapes[0], ("sa0.0.weight".to_string(), vec![6, 64]));
        let find = |n: &str| shapes.iter().find(|s| s.0 == n).unwrap().1.clone();
        assert_eq!(find("sa1.0.weight"), vec![131, 128]);
        assert_eq!(find("fp0.0.weight"), vec![512 + 256, 256]);
        assert_eq!(find("fp2.0.weight"), vec![128 + 3, 128]);
        assert_eq!(find("head.weight"), vec![128, 2]);
        assert!(tiny_config().validate().is_ok());
        let p = ModelParams::init(&tiny_config()).unwrap();
        assert!(p.num_parameters() <= 1000, "{}", p.num_parameters());
    }

    #[test]
    fn logits_shape_and_finite() {
        let params = ModelParams::init(&NetworkConfig::compact()).unwrap();
        let out = forward_batch(&params, &[cloud(512, 1)]).unwrap();
        assert_eq!(out[0].shape(), &[512, 2]);
        assert!(out[0].all_finite());
    }

    #[test]
    fn duplicated_batch_gives_identical_logits() {
        let params = ModelParams::init(&tiny_config()).unwrap();
        let c = cloud(64, 2);
        let out = forward_batch(&params, &[c.clone(), c]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn rejects_too_few_points_and_bad_config() {
        let params = ModelParams::init(&tiny_config()).unwrap();
        assert!(forward_batch(&params, &[cloud(8, 3)]).is_err());
        let mut bad = tiny_config();
        bad.fp_levels.pop();
        assert!(ModelParams::init(&bad).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        // nsample covers every ball so grouping truncation cannot depend on order
        let mut cfg = tiny_config();
        cfg.sa_levels[0].nsample = 64;
        cfg.sa_levels[1].nsample = 16;
        let params = ModelParams::init(&cfg).unwrap();
        let pts = cloud(64, 4);
        let mut perm: Vec<usize> = (0..64).collect();
        let mut r = rng::stream(9, 0);
        for i in (1..64).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permuted: Vec<[f32; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let start = 7usize;
        let start_perm = perm.iter().position(|&i| i == start).unwrap();
        let run = |pts: &[[f32; 3]], s: usize| {
            let geo = Geometry::build(pts, &cfg, Some(s)).unwrap();
            let mut tape = Tape::<f64>::inference();
            let b = BoundParams::bind(&mut tape, &params, false);
            let l = forward(&mut tape, &b, &cfg, &geo).unwrap();
            tape.value(l).clone()
        };
        let a = run(&pts, start);
        let b = run(&permuted, start_perm);
        for (j, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                let (x, y) = (a.data()[i * 2 + c], b.data()[j * 2 + c]);
                assert!((x - y).abs() < 1e-5, "point {i}: {x} vs {y}");
            }
        }
    }
}
