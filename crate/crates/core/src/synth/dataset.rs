//! Synthetic dataset generation and case directories.
//!
//! A case directory holds `volume.rvol`, `truth_labels.rvol`,
//! `centerlines.json` and `meta.json`; the dataset root holds
//! `manifest.json` with the split of every case and SHA-256 digests of its
//! files.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_phantom, PhantomConfig, PhantomTruth, RibCurve};
use crate::error::{Error, Result};
use crate::metrics::canonical_json;
use crate::postprocess::Side;
use crate::rng::{self, streams};
use crate::volume::{read_label_map, read_volume, write_label_map, write_volume, LabelMap, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub implant: bool,
    /// File name to lowercase hex SHA-256.
    pub sha256: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub base_seed: u64,
    pub version: String,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Probability that a case carries each distractor.
const P_SCAPULA: f64 = 0.7;
const P_IMPLANT: f64 = 0.6;
const P_TABLE: f64 = 0.8;
/// Probability that a case lacks its twelfth pair.
const P_NO_TWELFTH: f64 = 0.2;

/// A random variation of `base`: jittered radii, arc sizes, spacing and
/// tilt, random floating-rib omission and random distractors.
pub fn vary_config(base: &PhantomConfig, seed: u64) -> PhantomConfig {
    let mut r = rng::stream(seed, streams::DATASET);
    let mut j = |rel: f64| 1.0 + r.random_range(-rel..=rel);
    let mut cfg = PhantomConfig {
        rib_radius_mm: base.rib_radius_mm * j(0.12),
        cage_width_mm: base.cage_width_mm * j(0.08),
        cage_depth_mm: base.cage_depth_mm * j(0.08),
        pair_spacing_mm: base.pair_spacing_mm * j(0.06),
        tilt_rad: base.tilt_rad * j(0.25),
        vertebra_radius_mm: base.vertebra_radius_mm * j(0.1),
        ..base.clone()
    };
    let mut r = rng::stream(seed, streams::DATASET + 100);
    cfg.center_offset_mm = std::array::from_fn(|_| r.random_range(-8.0..=8.0));
    cfg.scapula = r.random_bool(P_SCAPULA);
    cfg.implant = r.random_bool(P_IMPLANT);
    cfg.table = r.random_bool(P_TABLE);
    if r.random_bool(P_NO_TWELFTH) && cfg.pairs == 12 {
        cfg.missing_ribs.extend([(Side::Left, 12), (Side::Right, 12)]);
    }
    cfg
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseMeta {
    id: String,
    seed: u64,
    split: Split,
    config: PhantomConfig,
    rib_fraction: f64,
    version: String,
}

/// Writes one case directory and returns its file digests.
pub fn write_case(dir: &Path, id: &str, split: Split, seed: u64, cfg: &PhantomConfig, volume: &Volume, truth: &PhantomTruth) -> Result<CaseEntry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_volume(dir.join("volume.rvol"), volume)?;
    write_label_map(dir.join("truth_labels.rvol"), &truth.labels)?;
    let curves = serde_json::json!({ "case_id": id, "ribs": truth.curves });
    write_text(&dir.join("centerlines.json"), &canonical_json(&curves)?)?;
    let meta = CaseMeta {
        id: id.to_string(),
        seed,
        split,
        config: cfg.clone(),
        rib_fraction: truth.rib_fraction,
        version: crate::VERSION.to_string(),
    };
    write_text(&dir.join("meta.json"), &canonical_json(&meta)?)?;
    let mut sha256 = std::collections::BTreeMap::new();
    for f in ["volume.rvol", "truth_labels.rvol", "centerlines.json", "meta.json"] {
        sha256.insert(f.to_string(), sha256_file(&dir.join(f))?);
    }
    Ok(CaseEntry {
        id: id.to_string(),
        split,
        seed,
        implant: cfg.implant,
        sha256,
    })
}

/// Generates `n_train + n_dev + n_test` cases under `out`. Case `i` uses
/// seed `derive(base_seed, i)`; splits take consecutive index ranges.
pub fn generate_dataset(
    out: &Path,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    base_seed: u64,
    base: &PhantomConfig,
) -> Result<DatasetManifest> {
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::invalid("every split needs at least one case"));
    }
    base.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cases = Vec::new();
    for i in 0..n_train + n_dev + n_test {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        let seed = rng::derive(base_seed, i as u64);
        let cfg = vary_config(base, seed);
        let (volume, truth) = generate_phantom(&cfg, seed)?;
        let id = format!("case_{i:04}");
        log::info!("{id} ({split:?}): rib fraction {:.4}%", 100.0 * truth.rib_fraction);
        cases.push(write_case(&out.join(&id), &id, split, seed, &cfg, &volume, &truth)?);
    }
    let manifest = DatasetManifest {
        base_seed,
        version: crate::VERSION.to_string(),
        cases,
    };
    write_text(&out.join("manifest.json"), &canonical_json(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct CaseData {
    pub dir: PathBuf,
    pub volume: Volume,
    pub labels: LabelMap,
    pub curves: Vec<RibCurve>,
}

pub fn read_case(dir: &Path) -> Result<CaseData> {
    let volume = read_volume(dir.join("volume.rvol"))?;
    let labels = read_label_map(dir.join("truth_labels.rvol"))?;
    let path = dir.join("centerlines.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let curves = serde_json::from_value(v.get("ribs").cloned().unwrap_or_default())?;
    Ok(CaseData {
        dir: dir.to_path_buf(),
        volume,
        labels,
        curves,
    })
}
