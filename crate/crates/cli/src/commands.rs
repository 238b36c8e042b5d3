//! Subcommand definitions and their wiring onto the library.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ribpoint::centerline::{centerlines_json, extract_all, CenterlineConfig};
use ribpoint::metrics::{canonical_pair, per_rib_recall, CaseReport, DiceReport};
use ribpoint::network::{read_checkpoint, train, write_checkpoint, ModelParams, NetworkConfig, TrainConfig};
use ribpoint::pipeline::{benchmark, candidate_mask, case_points, segment_points, SegmentConfig};
use ribpoint::pointcloud::{random_downsample, read_points, write_points, PointSet};
use ribpoint::postprocess::{instances_json, label_rib_instances, RibInstance, RibLabeling, Side};
use ribpoint::rng;
use ribpoint::synth::{generate_dataset, generate_phantom, read_case, DatasetManifest, PhantomConfig, Split};
use ribpoint::volume::{read_label_map, read_mask, write_label_map, write_mask, BinaryMask, LabelMap};

use crate::io::*;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "ribpoint", version, about = "Rib segmentation from CT volumes via sparse point clouds")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Base seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (training batches, per-case inference). 1 is
    /// deterministic.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON config, typically a `run_config.json` from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct Candidates {
    /// Sample from every voxel above the bone threshold instead of only
    /// those inside the body.
    #[arg(long)]
    pub raw_binarization: bool,
    /// Bone threshold in HU.
    #[arg(long)]
    pub threshold: Option<i16>,
}

impl Candidates {
    fn apply(&self, cfg: &mut SegmentConfig) {
        if self.raw_binarization {
            cfg.remove_exterior = false;
        }
        if let Some(t) = self.threshold {
            cfg.bone_threshold_hu = t;
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic phantom dataset with train/dev/test splits.
    Synth {
        /// Training cases (default 20).
        #[arg(long)]
        train: Option<usize>,
        /// Validation cases (default 5).
        #[arg(long)]
        dev: Option<usize>,
        /// Test cases (default 5).
        #[arg(long)]
        test: Option<usize>,
        /// Use the small 128^3 desk phantom as the base configuration.
        #[arg(long)]
        desk: bool,
    },
    /// Threshold a volume into the bone candidate mask.
    Binarize {
        /// CT volume, RVOL or NIfTI.
        #[arg(long)]
        volume: PathBuf,
        #[command(flatten)]
        candidates: Candidates,
    },
    /// Convert candidate voxels to a randomly downsampled point set.
    Sample {
        /// CT volume, RVOL or NIfTI.
        #[arg(long)]
        volume: PathBuf,
        /// Truth label map; points inside any instance are labeled rib.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Number of points to draw.
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        candidates: Candidates,
    },
    /// Train the segmentation network on a dataset's train split, validating
    /// on its dev split.
    Train {
        /// Dataset directory containing `manifest.json`.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        candidates: Candidates,
    },
    /// Segment volumes: points, predictions, voxel mask and rib instances.
    Infer {
        /// Trained weights written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// One or more volumes; several volumes get one subdirectory each.
        #[arg(long, required = true, num_args = 1..)]
        volume: Vec<PathBuf>,
        /// Use this point set (millimeters) instead of sampling; single
        /// volume only.
        #[arg(long)]
        points_file: Option<PathBuf>,
        /// Points fed to the network per volume.
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        candidates: Candidates,
    },
    /// Extract one centerline per rib instance.
    Centerline {
        /// Instance label map; side and pair come from a sibling `.json`
        /// manifest when present, else from the canonical label encoding.
        #[arg(long, conflicts_with = "mask", required_unless_present = "mask")]
        instances: Option<PathBuf>,
        /// Binary rib mask, labeled into instances first.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Mask (such as the vertebra) the centerlines should start next to.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// Case id in the output; derived from the input path when absent.
        #[arg(long)]
        case_id: Option<String>,
    },
    /// Voxel Dice and missing-rib ratios of predicted masks against truth
    /// label maps, pairing the n-th `--pred` with the n-th `--gt`.
    Eval {
        /// Predicted masks or label maps; any nonzero voxel counts as rib.
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        /// Truth instance label maps with canonical rib ids.
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Case ids for the report, one per `--pred`; derived from the
        /// paths when absent.
        #[arg(long, num_args = 1..)]
        case_id: Vec<String>,
    },
    /// Time pipeline stages and the dense convolution reference.
    Bench {
        /// Trained weights; timing does not depend on them, so a freshly
        /// initialized network is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Volume to time on; the default phantom when absent.
        #[arg(long)]
        volume: Option<PathBuf>,
        /// Timed runs per stage; the median is reported.
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        candidates: Candidates,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Binarize { .. } => "binarize",
            Command::Sample { .. } => "sample",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Centerline { .. } => "centerline",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
        }
    }
}

/// Config file layout; identical to the `run_config.json` each run writes.
#[derive(Deserialize)]
struct ConfigFile<T> {
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(default)]
    config: Option<T>,
}

impl<T> Default for ConfigFile<T> {
    fn default() -> Self {
        ConfigFile {
            seed: None,
            threads: None,
            config: None,
        }
    }
}

struct Resolved<T> {
    seed: u64,
    threads: usize,
    out: PathBuf,
    config: T,
}

fn resolve<T: Default + DeserializeOwned>(g: &Global) -> CliResult<Resolved<T>> {
    let out = g.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let file: ConfigFile<T> = load_config(g.config.as_ref())?;
    let threads = g.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    Ok(Resolved {
        seed: g.seed.or(file.seed).unwrap_or(0),
        threads,
        out,
        config: file.config.unwrap_or_default(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub phantom: PhantomConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 20,
            dev: 5,
            test: 5,
            phantom: PhantomConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Candidate extraction for the training volumes.
    pub segment: SegmentConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub repeats: usize,
    /// Used when no checkpoint is given.
    pub network: NetworkConfig,
    pub segment: SegmentConfig,
    /// Used when no volume is given.
    pub phantom: PhantomConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repeats: 5,
            network: NetworkConfig::default(),
            segment: SegmentConfig::default(),
            phantom: PhantomConfig::default(),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let name = cli.command.name();
    match cli.command {
        Command::Synth { train, dev, test, desk } => {
            let mut r = resolve::<SynthConfig>(g)?;
            if desk {
                r.config.phantom = PhantomConfig::desk();
            }
            r.config.train = train.unwrap_or(r.config.train);
            r.config.dev = dev.unwrap_or(r.config.dev);
            r.config.test = test.unwrap_or(r.config.test);
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let c = &r.config;
            let m = generate_dataset(&r.out, c.train, c.dev, c.test, r.seed, &c.phantom)?;
            log::info!("wrote {} cases to {}", m.cases.len(), r.out.display());
        }
        Command::Binarize { volume, candidates } => {
            let mut r = resolve::<SegmentConfig>(g)?;
            candidates.apply(&mut r.config);
            let v = load_volume(&volume)?;
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let mask = candidate_mask(&v, &r.config);
            write_mask(r.out.join("mask.rvol"), &mask)?;
            log::info!("{} candidate voxels", mask.count());
        }
        Command::Sample {
            volume,
            labels,
            points,
            candidates,
        } => {
            let mut r = resolve::<SegmentConfig>(g)?;
            candidates.apply(&mut r.config);
            r.config.points = points.unwrap_or(r.config.points);
            let v = load_volume(&volume)?;
            let truth = match &labels {
                Some(p) => {
                    require_file(p, "label map")?;
                    Some(read_label_map(p)?)
                }
                None => None,
            };
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let (_, all) = case_points(&v, truth.as_ref(), &r.config)?;
            let drawn = random_downsample(&all, r.config.points, r.seed)?;
            write_points(r.out.join("points.rpts"), &drawn)?;
        }
        Command::Train { data, epochs, candidates } => {
            let mut r = resolve::<TrainRunConfig>(g)?;
            candidates.apply(&mut r.config.segment);
            r.config.train.epochs = epochs.unwrap_or(r.config.train.epochs);
            r.config.train.threads = r.threads;
            require_dir(&data, "dataset")?;
            require_file(&data.join("manifest.json"), "manifest")?;
            r.config.network.validate()?;
            r.config.train.validate()?;
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            run_train(&data, &r)?;
        }
        Command::Infer {
            checkpoint,
            volume,
            points_file,
            points,
            candidates,
        } => {
            let mut r = resolve::<SegmentConfig>(g)?;
            candidates.apply(&mut r.config);
            r.config.points = points.unwrap_or(r.config.points);
            require_file(&checkpoint, "checkpoint")?;
            for v in &volume {
                require_file(v, "volume")?;
            }
            if let Some(p) = &points_file {
                require_file(p, "point set")?;
                if volume.len() != 1 {
                    return Err(CliError::Usage("--points-file needs exactly one --volume".into()));
                }
            }
            let mut names: Vec<String> = volume.iter().map(|v| case_name(v)).collect();
            names.sort();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                return Err(CliError::Usage(format!("two volumes map to output directory {}", w[0])));
            }
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let params = read_checkpoint(&checkpoint)?.params;
            run_infer(&params, &volume, points_file.as_deref(), &r)?;
        }
        Command::Centerline {
            instances,
            mask,
            anchor,
            case_id,
        } => {
            let r = resolve::<CenterlineConfig>(g)?;
            let (labeling, source) = match (&instances, &mask) {
                (Some(p), _) => {
                    require_file(p, "instance map")?;
                    (instances_from_map(p)?, p.clone())
                }
                (None, Some(p)) => {
                    require_file(p, "rib mask")?;
                    (label_rib_instances(&read_label_map(p)?.any_label()), p.clone())
                }
                (None, None) => return Err(CliError::Usage("--instances or --mask is required".into())),
            };
            let anchor = match &anchor {
                Some(p) => {
                    require_file(p, "anchor mask")?;
                    Some(read_mask(p)?)
                }
                None => None,
            };
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let id = case_id.unwrap_or_else(|| case_name(&source));
            let ribs = extract_all(&labeling, &r.config, anchor.as_ref())?;
            write_json(&r.out.join("centerlines.json"), &centerlines_json(&id, &ribs))?;
        }
        Command::Eval { pred, gt, case_id } => {
            let r = resolve::<EvalConfig>(g)?;
            if pred.len() != gt.len() {
                return Err(CliError::Usage(format!("{} --pred paths but {} --gt paths", pred.len(), gt.len())));
            }
            if !case_id.is_empty() && case_id.len() != pred.len() {
                return Err(CliError::Usage("--case-id must be given once per --pred".into()));
            }
            for p in pred.iter().chain(&gt) {
                require_file(p, "input")?;
            }
            write_run_config(&r.out, name, r.seed, r.threads, &r.config)?;
            let mut cases = Vec::new();
            for (i, (p, t)) in pred.iter().zip(&gt).enumerate() {
                let id = case_id.get(i).cloned().unwrap_or_else(|| case_name(p));
                cases.push(eval_case(&id, p, t)?);
            }
            let report = DiceReport::from_cases(cases)?;
            write_json(&r.out.join("metrics.json"), &report)?;
            write_text(&r.out.join("metrics.csv"), &report.to_csv())?;
        }
        Command::Bench {
            checkpoint,
            volume,
            repeats,
            candidates,
        } => {
            let mut r = resolve::<BenchConfig>(g)?;
            candidates.apply(&mut r.config.segment);
            r.config.repeats = repeats.unwrap_or(r.config.repeats);
            if r.config.repeats < 3 {
                return Err(CliError::Usage("--repeats must be at least 3".into()));
            }
            if let Some(p) = &checkpoint {
                require_file(p, "checkpoint")?;
            }
            if let Some(p) = &volume {
                require_file(p, "volume")?;
            }
            if r.threads != 1 {
                log::warn!("bench always runs single-threaded");
            }
            write_run_config(&r.out, name, r.seed, 1, &r.config)?;
            let params = match &checkpoint {
                Some(p) => read_checkpoint(p)?.params,
                None => ModelParams::init(&r.config.network)?,
            };
            let v = match &volume {
                Some(p) => load_volume(p)?,
                None => generate_phantom(&r.config.phantom, r.seed)?.0,
            };
            let report = benchmark(&params, &v, &r.config.segment, r.config.repeats, r.seed)?;
            write_json(&r.out.join("bench.json"), &report)?;
        }
    }
    Ok(())
}

fn load_split(data: &Path, manifest: &DatasetManifest, split: Split, cfg: &SegmentConfig) -> CliResult<Vec<PointSet>> {
    manifest
        .split(split)
        .map(|c| {
            let case = read_case(&data.join(&c.id))?;
            Ok(case_points(&case.volume, Some(&case.labels), cfg)?.1)
        })
        .collect()
}

fn run_train(data: &Path, r: &Resolved<TrainRunConfig>) -> CliResult<()> {
    let manifest = DatasetManifest::read(&data.join("manifest.json"))?;
    let seg = &r.config.segment;
    let train_set = load_split(data, &manifest, Split::Train, seg)?;
    let dev_set = load_split(data, &manifest, Split::Dev, seg)?;
    if train_set.is_empty() {
        return Err(CliError::Usage(format!("{} has no train cases", data.display())));
    }
    let cfg = TrainConfig {
        checkpoint_dir: Some(r.out.clone()),
        ..r.config.train.clone()
    };
    let outcome = train(&train_set, &dev_set, &r.config.network, &cfg, r.seed)?;
    let meta = serde_json::json!({
        "version": ribpoint::VERSION,
        "seed": r.seed,
        "epochs": outcome.log.len(),
        "best_val_dice": outcome.best_val_dice,
    });
    write_checkpoint(&r.out.join("model.rckp"), &outcome.params, &meta)?;
    write_json(&r.out.join("train_log.json"), &outcome.log)?;
    Ok(())
}

fn infer_case(params: &ModelParams, volume: &Path, points_file: Option<&Path>, out: &Path, cfg: &SegmentConfig, seed: u64) -> CliResult<()> {
    let v = load_volume(volume)?;
    let candidates = candidate_mask(&v, cfg);
    let all = match points_file {
        Some(p) => read_points(p)?,
        None => case_points(&v, None, cfg)?.1,
    };
    let seg = segment_points(params, &candidates, &all, cfg, seed)?;
    create_dir(out)?;
    write_mask(out.join("pred_mask.rvol"), &seg.mask)?;
    let predicted = PointSet::new(seg.points.coords.clone()).with_labels(seg.prediction.labels.clone())?;
    write_points(out.join("predictions.rpts"), &predicted)?;
    let labeling = label_rib_instances(&seg.mask);
    write_label_map(out.join("instances.rvol"), &labeling.labels)?;
    write_json(&out.join("instances.json"), &instances_json(&labeling))?;
    Ok(())
}

fn run_infer(params: &ModelParams, volumes: &[PathBuf], points_file: Option<&Path>, r: &Resolved<SegmentConfig>) -> CliResult<()> {
    let jobs: Vec<(PathBuf, PathBuf, u64)> = volumes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let out = if volumes.len() == 1 { r.out.clone() } else { r.out.join(case_name(v)) };
            (v.clone(), out, rng::derive(r.seed, i as u64))
        })
        .collect();
    let workers = r.threads.min(jobs.len()).max(1);
    let results: Vec<CliResult<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                s.spawn(move || {
                    jobs.iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|(v, out, seed)| infer_case(params, v, points_file, out, &r.config, *seed))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// Instances of a label map, described by its sibling manifest when one
/// exists and by the canonical encoding otherwise.
fn instances_from_map(path: &Path) -> CliResult<RibLabeling> {
    let labels: LabelMap = read_label_map(path)?;
    let sidecar = path.with_extension("json");
    let counts = labels.label_counts();
    let instances: Vec<RibInstance> = if sidecar.is_file() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| CliError::Run(ribpoint::Error::Other(format!("{}: {e}", sidecar.display()))))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(ribpoint::Error::from)?;
        serde_json::from_value(v.get("instances").cloned().unwrap_or_default()).map_err(ribpoint::Error::from)?
    } else {
        (1..counts.len())
            .filter(|&l| counts[l] > 0)
            .map(|l| {
                let m: BinaryMask = labels.instance_mask(l as u32);
                let fg = m.foreground();
                let mut c = [0.0; 3];
                for &i in &fg {
                    let p = m.voxel_center(i);
                    (0..3).for_each(|k| c[k] += p[k] / fg.len() as f64);
                }
                RibInstance {
                    id: l as u32,
                    side: if l % 2 == 1 { Side::Left } else { Side::Right },
                    pair_index: canonical_pair(l as u32),
                    voxels: counts[l],
                    centroid_mm: c,
                }
            })
            .collect()
    };
    Ok(RibLabeling {
        labels,
        instances,
        warnings: Vec::new(),
    })
}

fn eval_case(id: &str, pred: &Path, gt: &Path) -> CliResult<CaseReport> {
    let p = read_label_map(pred)?.any_label();
    let t = read_label_map(gt)?;
    Ok(CaseReport {
        case_id: id.to_string(),
        dice_voxel: ribpoint::metrics::dice(&p, &t.any_label())?,
        dice_point: None,
        recall: per_rib_recall(&t, &p)?,
    })
}
