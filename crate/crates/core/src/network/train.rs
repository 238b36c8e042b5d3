//! Mini-batch training with per-sample resampling and augmentation.
//!
//! Each sample of a batch is evaluated on its own tape. Per-sample gradients
//! are summed in batch order in f64 and divided by the batch size, so the
//! result does not depend on how many threads evaluated the samples.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::checkpoint::write_checkpoint;
use super::infer::{infer_with, InferConfig};
use super::model::{forward, BoundParams, Geometry, ModelParams, NetworkConfig};
use super::optim::{lr_at_epoch, AdamConfig, AdamState};
use super::sampling::fps_start;
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::pointcloud::{augment, normalize, random_downsample, AugmentConfig, PointSet, LABEL_RIB, TRAIN_POINTS};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub lr_floor: f64,
    pub points_per_sample: usize,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    /// Write `epoch_NNNN.rckp` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Points per validation sample.
    pub val_points: usize,
    /// Stop after the first epoch whose training point Dice reaches this.
    pub stop_at_dice: Option<f64>,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 8,
            lr0: 1e-3,
            decay: 0.5,
            decay_every: 20,
            lr_floor: 1e-5,
            points_per_sample: TRAIN_POINTS,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            val_points: TRAIN_POINTS,
            stop_at_dice: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.points_per_sample == 0 || self.decay_every == 0 {
            return Err(Error::invalid("epochs, batch_size, points_per_sample and decay_every must be positive"));
        }
        if !(self.lr0 > 0.0 && self.decay > 0.0 && self.lr_floor > 0.0 && self.lr_floor <= self.lr0) {
            return Err(Error::invalid("learning rates must be positive with lr_floor <= lr0"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        self.augment.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.lr0, self.decay, self.decay_every, self.lr_floor, epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Rib-class Dice over all points seen during the epoch.
    pub train_dice: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_val_dice: Option<f64>,
}

/// A labeled point set in millimeters. It is resampled, normalized and
/// augmented afresh every time it is drawn.
pub type TrainSample = PointSet;

/// Rib-class overlap counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: &[u8], truth: &[u8]) {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == LABEL_RIB, t == LABEL_RIB) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                _ => {}
            }
        }
    }

    /// 1 when both prediction and truth are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn labels_of(p: &PointSet) -> Result<&[u8]> {
    p.labels
        .as_deref()
        .ok_or_else(|| Error::invalid("training samples must carry labels"))
}

struct SampleResult {
    loss: f64,
    grads: Vec<Vec<f32>>,
    pred: Vec<u8>,
    truth: Vec<u8>,
}

fn run_sample(params: &ModelParams, sample: &PointSet, cfg: &TrainConfig, seed: u64) -> Result<SampleResult> {
    let net = &params.config;
    let n = cfg.points_per_sample.max(net.min_points());
    let drawn = random_downsample(sample, n, seed)?;
    let (normed, _) = normalize(&drawn)?;
    let aug = augment(&normed, &cfg.augment, seed)?;
    let truth = labels_of(&aug)?.to_vec();

    let start = fps_start(aug.len(), rng::derive(seed, streams::FPS_START));
    let geo = Geometry::build(&aug.coords, net, Some(start))?;
    let mut tape = Tape::<f32>::new();
    let bound = BoundParams::bind(&mut tape, params, true);
    let logits = forward(&mut tape, &bound, net, &geo)?;
    let loss = tape.cross_entropy(logits, &truth)?;
    let mut g = tape.backward(loss)?;
    let c = net.num_classes;
    let pred = tape
        .value(logits)
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    let grads = bound
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| g.take(v).map_or_else(|| vec![0.0; t.len()], |t| t.into_data()))
        .collect();
    Ok(SampleResult {
        loss: tape.value(loss).data()[0] as f64,
        grads,
        pred,
        truth,
    })
}

fn run_batch(params: &ModelParams, jobs: &[(&PointSet, u64)], cfg: &TrainConfig) -> Result<Vec<SampleResult>> {
    if cfg.threads <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(|&(s, seed)| run_sample(params, s, cfg, seed)).collect();
    }
    let per = jobs.len().div_ceil(cfg.threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(per)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(s, seed)| run_sample(params, s, cfg, seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Other("training worker panicked".into()))??);
        }
        Ok(out)
    })
}

/// Point-level rib Dice of the model on fixed downsamples of `samples`.
pub fn evaluate_points(params: &ModelParams, samples: &[PointSet], n: usize, seed: u64) -> Result<f64> {
    let mut conf = Confusion::default();
    for (i, s) in samples.iter().enumerate() {
        let drawn = random_downsample(s, n.max(params.config.min_points()), rng::derive(seed, i as u64))?;
        let (normed, _) = normalize(&drawn)?;
        let pred = infer_with(params, &normed, &InferConfig::default())?;
        conf.add(&pred.labels, labels_of(&normed)?);
    }
    Ok(conf.dice())
}

pub fn train(
    dataset: &[TrainSample],
    validation: &[TrainSample],
    net: &NetworkConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_from(ModelParams::init(net)?, dataset, validation, cfg, seed)
}

/// Continues training from existing parameters (and optimizer state when
/// present). Epoch numbering restarts at 0.
pub fn train_from(
    mut params: ModelParams,
    dataset: &[TrainSample],
    validation: &[TrainSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for s in dataset.iter().chain(validation) {
        s.validate()?;
        labels_of(s)?;
        if s.is_empty() {
            return Err(Error::invalid("training sample has no points"));
        }
    }
    let mut adam = params.optimizer.take().unwrap_or_else(|| AdamState::new(&params.tensors));
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_val: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let epoch_seed = rng::derive(seed, epoch as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut r = rng::stream(epoch_seed, streams::SHUFFLE);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);

        let mut conf = Confusion::default();
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let jobs: Vec<(&PointSet, u64)> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| (&dataset[i], rng::derive(epoch_seed, (b * cfg.batch_size + j) as u64 + 1)))
                .collect();
            let results = run_batch(&params, &jobs, cfg)?;
            let mut total: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            for res in &results {
                loss_sum += res.loss;
                conf.add(&res.pred, &res.truth);
                for (acc, g) in total.iter_mut().zip(&res.grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v as f64;
                    }
                }
            }
            let inv = 1.0 / results.len() as f64;
            total.iter_mut().flatten().for_each(|v| *v *= inv);
            adam.update(&cfg.adam, lr, &mut params.tensors, &total)?;
        }
        if params.tensors.iter().any(|t| !t.all_finite()) {
            return Err(Error::Other(format!("parameters became non-finite in epoch {epoch}")));
        }

        let val_dice = if validation.is_empty() {
            None
        } else {
            Some(evaluate_points(&params, validation, cfg.val_points, rng::derive(seed, u64::MAX))?)
        };
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss_sum / dataset.len() as f64,
            train_dice: conf.dice(),
            val_dice,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.5} train dice {:.4}{}",
            entry.loss,
            entry.train_dice,
            val_dice.map_or(String::new(), |d| format!(" val dice {d:.4}"))
        );

        if let Some(dir) = &cfg.checkpoint_dir {
            let snapshot = |params: &ModelParams| {
                let mut p = params.clone();
                p.optimizer = Some(adam.clone());
                p
            };
            let meta = serde_json::json!({ "epoch": epoch, "train": cfg, "seed": seed });
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                write_checkpoint(&dir.join(format!("epoch_{:04}.rckp", epoch + 1)), &snapshot(&params), &meta)?;
            }
            if let Some(d) = val_dice {
                if best_val.is_none_or(|b| d > b) {
                    write_checkpoint(&dir.join("best.rckp"), &snapshot(&params), &meta)?;
                }
            }
        }
        if let Some(d) = val_dice {
            if best_val.is_none_or(|b| d > b) {
                best_val = Some(d);
            }
        }
        let stop = cfg.stop_at_dice.is_some_and(|t| entry.train_dice >= t);
        log.push(entry);
        if stop {
            break;
        }
    }
    params.optimizer = Some(adam);
    Ok(TrainOutcome {
        params,
        log,
        best_val_dice: best_val,
    })
}
