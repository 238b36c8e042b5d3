//! Dice overlap, per-rib recall with the missing-rib rule, report
//! serialization and the timing harness.

pub mod bench;

pub use bench::{bench, dense_conv_baseline, DenseBaseline, Stage, StageTiming, TimingReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, LabelMap};

/// A rib is missing when less than this fraction of it is predicted.
pub const MISSING_RECALL: f64 = 0.5;

/// `2|a ∩ b| / (|a| + |b|)`, defined as 1 when both sets are empty.
pub fn dice_counts(intersection: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (a + b) as f64
    }
}

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!("dice over {} and {}", a.dims(), b.dims())));
    }
    let (mut i, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        i += (x && y) as usize;
    }
    Ok(dice_counts(i, na, nb))
}

/// Dice of the `positive` class between two label sequences over the same
/// point indices.
pub fn dice_labels(pred: &[u8], truth: &[u8], positive: u8) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let (mut i, mut na, mut nb) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p == positive, t == positive);
        na += p as usize;
        nb += t as usize;
        i += (p && t) as usize;
    }
    Ok(dice_counts(i, na, nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairGroup {
    First,
    Intermediate,
    Twelfth,
}

impl PairGroup {
    pub fn of(pair_index: u32) -> Self {
        match pair_index {
            1 => PairGroup::First,
            12 => PairGroup::Twelfth,
            _ => PairGroup::Intermediate,
        }
    }
}

/// Pair index of a canonical rib label `2 * (pair - 1) + side + 1`
/// (side 0 = left, 1 = right).
pub fn canonical_pair(label: u32) -> u32 {
    (label - 1) / 2 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibRecall {
    pub label: u32,
    pub pair_index: u32,
    pub voxels: usize,
    pub recall: f64,
    pub missing: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub ribs: usize,
    pub missing: usize,
    /// `missing / ribs`, absent when the group has no ribs.
    pub ratio: Option<f64>,
}

impl GroupStat {
    fn add(&mut self, missing: bool) {
        self.ribs += 1;
        self.missing += missing as usize;
    }

    fn finish(mut self) -> Self {
        self.ratio = (self.ribs > 0).then(|| self.missing as f64 / self.ribs as f64);
        self
    }

    pub fn merge(&self, other: &GroupStat) -> GroupStat {
        GroupStat {
            ribs: self.ribs + other.ribs,
            missing: self.missing + other.missing,
            ratio: None,
        }
        .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibRecallReport {
    pub ribs: Vec<RibRecall>,
    pub all: GroupStat,
    pub first: GroupStat,
    pub intermediate: GroupStat,
    pub twelfth: GroupStat,
}

impl RibRecallReport {
    pub fn merge(&self, other: &RibRecallReport) -> RibRecallReport {
        let mut ribs = self.ribs.clone();
        ribs.extend(other.ribs.iter().cloned());
        RibRecallReport {
            ribs,
            all: self.all.merge(&other.all),
            first: self.first.merge(&other.first),
            intermediate: self.intermediate.merge(&other.intermediate),
            twelfth: self.twelfth.merge(&other.twelfth),
        }
    }
}

/// Recall of every ground-truth instance under `pred`, with pair indices
/// from the canonical label encoding.
pub fn per_rib_recall(gt: &LabelMap, pred: &BinaryMask) -> Result<RibRecallReport> {
    per_rib_recall_with(gt, pred, canonical_pair)
}

pub fn per_rib_recall_with(gt: &LabelMap, pred: &BinaryMask, pair_of: impl Fn(u32) -> u32) -> Result<RibRecallReport> {
    if gt.dims() != pred.dims() {
        return Err(Error::DimMismatch(format!("recall over {} and {}", gt.dims(), pred.dims())));
    }
    let k = gt.num_instances() as usize;
    let mut total = vec![0usize; k + 1];
    let mut hit = vec![0usize; k + 1];
    for (&l, &p) in gt.data().iter().zip(pred.data()) {
        total[l as usize] += 1;
        hit[l as usize] += (p && l != 0) as usize;
    }
    let mut ribs = Vec::new();
    let (mut all, mut first, mut inter, mut twelfth) = Default::default();
    for label in 1..=k {
        if total[label] == 0 {
            continue;
        }
        let recall = hit[label] as f64 / total[label] as f64;
        let missing = recall < MISSING_RECALL;
        let pair_index = pair_of(label as u32);
        GroupStat::add(&mut all, missing);
        match PairGroup::of(pair_index) {
            PairGroup::First => GroupStat::add(&mut first, missing),
            PairGroup::Intermediate => GroupStat::add(&mut inter, missing),
            PairGroup::Twelfth => GroupStat::add(&mut twelfth, missing),
        }
        ribs.push(RibRecall {
            label: label as u32,
            pair_index,
            voxels: total[label],
            recall,
            missing,
        });
    }
    if ribs.is_empty() {
        return Err(Error::invalid("ground truth has no rib instances"));
    }
    Ok(RibRecallReport {
        ribs,
        all: GroupStat::finish(all),
        first: GroupStat::finish(first),
        intermediate: GroupStat::finish(inter),
        twelfth: GroupStat::finish(twelfth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub dice_voxel: f64,
    pub dice_point: Option<f64>,
    pub recall: RibRecallReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub cases: Vec<CaseReport>,
    pub mean_dice_voxel: f64,
    pub mean_dice_point: Option<f64>,
    /// Missing-rib statistics pooled over every case's ribs.
    pub missing_all: GroupStat,
    pub missing_first: GroupStat,
    pub missing_intermediate: GroupStat,
    pub missing_twelfth: GroupStat,
}

impl DiceReport {
    pub fn from_cases(cases: Vec<CaseReport>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::invalid("no cases to report"));
        }
        let n = cases.len() as f64;
        let mean_dice_voxel = cases.iter().map(|c| c.dice_voxel).sum::<f64>() / n;
        let mean_dice_point = cases
            .iter()
            .map(|c| c.dice_point)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        let pooled = cases[1..]
            .iter()
            .fold(cases[0].recall.clone(), |acc, c| acc.merge(&c.recall));
        Ok(DiceReport {
            mean_dice_voxel,
            mean_dice_point,
            missing_all: pooled.all,
            missing_first: pooled.first,
            missing_intermediate: pooled.intermediate,
            missing_twelfth: pooled.twelfth,
            cases,
        })
    }

    /// One row per case per metric: `case_id,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,metric,value\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for c in &self.cases {
            let rows = [
                ("dice_voxel", Some(c.dice_voxel)),
                ("dice_point", c.dice_point),
                ("missing_ratio_all", c.recall.all.ratio),
                ("missing_ratio_first", c.recall.first.ratio),
                ("missing_ratio_intermediate", c.recall.intermediate.ratio),
                ("missing_ratio_twelfth", c.recall.twelfth.ratio),
            ];
            for (name, v) in rows {
                out.push_str(&format!("{},{},{}\n", c.case_id, name, fmt(v)));
            }
        }
        out
    }
}

/// Serializes with sorted keys and a trailing newline, so equal reports give
/// equal bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v: serde_json::Value = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
