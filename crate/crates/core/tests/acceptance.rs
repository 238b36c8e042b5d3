//! End-to-end acceptance run: one pass/fail line per criterion, non-zero
//! exit when any fails.

mod common;

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use ribpoint::centerline::{extract_centerline, mean_symmetric_distance, polyline_length, CenterlineConfig};
use ribpoint::metrics::{canonical_json, dice, per_rib_recall, DiceReport, MISSING_RECALL};
use ribpoint::network::train::evaluate_points;
use ribpoint::network::{train, ModelParams, NetworkConfig, TrainConfig};
use ribpoint::pipeline::{benchmark, case_points, evaluate, segment_points, Segmentation, SegmentConfig};
use ribpoint::pointcloud::PointSet;
use ribpoint::rng;
use ribpoint::synth::{generate_dataset, generate_phantom, read_case, vary_config, CaseData, PhantomConfig, PhantomTruth, Split};
use ribpoint::volume::{binarize, dilate, BinaryMask, Dims, LabelMap, Volume, BONE_THRESHOLD_HU};

const BASE_SEED: u64 = 20_240_917;
const TRAIN_CASES: u64 = 20;
const TEST_CASES: u64 = 5;
const IMPLANT_CASES: u64 = 3;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(Default)]
struct Shared {
    model: Option<ModelParams>,
    /// (case, voxels of the predicted mask outside the binarized volume)
    containment: Vec<(String, usize)>,
}

fn record_containment(shared: &RefCell<Shared>, case: &str, v: &Volume, seg: &Segmentation) {
    let bin = binarize(v, BONE_THRESHOLD_HU);
    let outside = seg.mask.data().iter().zip(bin.data()).filter(|(&m, &b)| m && !b).count();
    shared.borrow_mut().containment.push((case.to_string(), outside));
}

fn case_seed(i: u64) -> u64 {
    rng::derive(BASE_SEED, i)
}

fn phantom(i: u64, implant: Option<bool>) -> (PhantomConfig, Volume, PhantomTruth) {
    let seed = case_seed(i);
    let mut cfg = vary_config(&PhantomConfig::default(), seed);
    if let Some(on) = implant {
        cfg.implant = on;
    }
    let (v, truth) = generate_phantom(&cfg, seed).expect("phantom");
    (cfg, v, truth)
}

fn labeled_points(v: &Volume, labels: &LabelMap) -> (BinaryMask, PointSet) {
    case_points(v, Some(labels), &SegmentConfig::default()).expect("points")
}

fn c1_metric_oracle() -> Check {
    let t = Instant::now();
    let mut r = rng::stream(BASE_SEED, 1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let dims = Dims::new(r.random_range(1..=32), r.random_range(1..=32), r.random_range(1..=32));
        let (pa, pb) = (r.random_range(0.0..0.6), r.random_range(0.0..0.6));
        let a: Vec<bool> = (0..dims.len()).map(|_| r.random_bool(pa)).collect();
        let b: Vec<bool> = (0..dims.len()).map(|_| r.random_bool(pb)).collect();
        let (ma, mb) = (
            BinaryMask::from_vec(dims, [1.0; 3], a.clone()).unwrap(),
            BinaryMask::from_vec(dims, [1.0; 3], b.clone()).unwrap(),
        );
        let (mut i, mut na, mut nb) = (0usize, 0usize, 0usize);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let k = dims.index(x, y, z);
                    i += (a[k] && b[k]) as usize;
                    na += a[k] as usize;
                    nb += b[k] as usize;
                }
            }
        }
        let expect = if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 };
        mismatches += (dice(&ma, &mb).unwrap() != expect) as usize;
    }

    let dims = Dims::new(16, 16, 16);
    let mut block = BinaryMask::filled(dims, [1.0; 3], false).unwrap();
    for z in 4..12 {
        for y in 4..12 {
            for x in 4..12 {
                block.set(x, y, z, true);
            }
        }
    }
    let mut shifted = BinaryMask::filled(dims, [1.0; 3], false).unwrap();
    for z in 4..12 {
        for y in 4..12 {
            for x in 0..4 {
                shifted.set(x, y, z, true);
            }
        }
    }
    let identity = dice(&block, &block).unwrap();
    let disjoint = dice(&block, &shifted).unwrap();

    let mut truth = LabelMap::filled(dims, [1.0; 3], 0).unwrap();
    let mut half = BinaryMask::filled(dims, [1.0; 3], false).unwrap();
    for z in 4..12 {
        for y in 4..12 {
            for x in 4..12 {
                truth.set(x, y, z, 1);
                half.set(x, y, z, x < 8);
            }
        }
    }
    let rec = per_rib_recall(&truth, &half).unwrap();
    let r0 = &rec.ribs[0];
    let secs = t.elapsed().as_secs_f64();
    ensure(
        mismatches == 0 && identity == 1.0 && disjoint == 0.0 && r0.recall == MISSING_RECALL && !r0.missing && secs < 10.0,
        format!(
            "200 pairs, {mismatches} mismatches; identity {identity}, disjoint {disjoint}; half overlap recall {} missing {}; {secs:.2} s",
            r0.recall, r0.missing
        ),
    )
}

fn c2_gradients() -> Check {
    let t = Instant::now();
    let (count, worst) = common::gradient_check_max_rel_error(&common::tiny_config());
    let secs = t.elapsed().as_secs_f64();
    ensure(
        count <= 1000 && worst < 1e-4 && secs < 120.0,
        format!("{count} parameters, max relative error {worst:.2e} (< 1e-4), {secs:.2} s"),
    )
}

fn c3_sampling() -> Check {
    let t = Instant::now();
    let bq = common::ball_query_mismatches(50);
    let hand = common::fps_collinear();
    let greedy = common::fps_greedy_violations(50);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        bq == 0 && hand == [0, 3] && greedy == 0 && secs < 30.0,
        format!("ball query mismatches {bq}/50 fixtures; fps collinear {hand:?}; greedy violations {greedy}; {secs:.2} s"),
    )
}

fn c4_overfit() -> Check {
    let t = Instant::now();
    let (v, truth) = generate_phantom(&PhantomConfig::default(), BASE_SEED).expect("phantom");
    let (_, points) = labeled_points(&v, &truth.labels);
    drop((v, truth));
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(std::slice::from_ref(&points), &[], &NetworkConfig::default(), &cfg, BASE_SEED).expect("train");
    let dice = evaluate_points(&out.params, std::slice::from_ref(&points), points.len(), BASE_SEED).expect("eval");
    let best_logged = out.log.iter().map(|e| e.train_dice).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        dice >= 0.95 && secs < 1800.0,
        format!(
            "training point dice {dice:.4} (>= 0.95) on all {} points after 200 epochs; best augmented-sample dice {best_logged:.4}; {secs:.0} s",
            points.len()
        ),
    )
}

fn c5_generalization(shared: &RefCell<Shared>) -> Check {
    let t = Instant::now();
    let mut train_sets = Vec::new();
    for i in 0..TRAIN_CASES {
        let (_, v, truth) = phantom(i, None);
        train_sets.push(labeled_points(&v, &truth.labels).1);
    }
    println!("    generated {TRAIN_CASES} training phantoms in {:.0} s", t.elapsed().as_secs_f64());
    let out = train(&train_sets, &[], &NetworkConfig::default(), &TrainConfig::default(), BASE_SEED).expect("train");
    drop(train_sets);
    let last = out.log.last().expect("log");
    println!(
        "    trained {} epochs in {:.0} s, last loss {:.4}, last sample dice {:.4}",
        out.log.len(),
        t.elapsed().as_secs_f64(),
        last.loss,
        last.train_dice
    );
    let mut cases = Vec::new();
    for i in TRAIN_CASES..TRAIN_CASES + TEST_CASES {
        let (_, v, truth) = phantom(i, None);
        let (mask, points) = labeled_points(&v, &truth.labels);
        let seg = segment_points(&out.params, &mask, &points, &SegmentConfig::default(), case_seed(i)).expect("segment");
        let id = format!("test_{i}");
        record_containment(shared, &id, &v, &seg);
        let report = evaluate(&id, &seg, &truth.labels).expect("evaluate");
        println!(
            "    {id}: voxel dice {:.4}, point dice {:.4}, missing {}/{}",
            report.dice_voxel,
            report.dice_point.unwrap_or(f64::NAN),
            report.recall.all.missing,
            report.recall.all.ribs
        );
        cases.push(report);
    }
    shared.borrow_mut().model = Some(out.params);
    let r = DiceReport::from_cases(cases).expect("report");
    let missing = r.missing_all.ratio.unwrap_or(1.0);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        r.mean_dice_voxel >= 0.85 && missing <= 0.05 && secs < 4.0 * 3600.0,
        format!(
            "mean voxel dice {:.4} (>= 0.85), missing ratio {:.4} ({}/{} ribs, <= 0.05), {secs:.0} s",
            r.mean_dice_voxel, missing, r.missing_all.missing, r.missing_all.ribs
        ),
    )
}

fn c6_robustness(shared: &RefCell<Shared>) -> Check {
    let model = shared.borrow().model.clone().ok_or("no model from the generalization run")?;
    let mut contained = 0;
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for i in TRAIN_CASES..TRAIN_CASES + TEST_CASES {
        let (_, v, truth) = phantom(i, None);
        let full_counts = truth.labels.label_counts();
        let (cv, cl) = (v.crop_upper_half().unwrap(), truth.labels.crop_upper_half().unwrap());
        drop((v, truth));
        let crop_counts = cl.label_counts();
        let (mask, points) = labeled_points(&cv, &cl);
        let seg = segment_points(&model, &mask, &points, &SegmentConfig::default(), case_seed(i)).expect("segment");
        let id = format!("crop_{i}");
        record_containment(shared, &id, &cv, &seg);
        let rec = per_rib_recall(&cl, &seg.mask).expect("recall");
        for rib in &rec.ribs {
            let l = rib.label as usize;
            if full_counts.get(l) == crop_counts.get(l) {
                contained += 1;
                worst = worst.min(rib.recall);
                if rib.recall < 0.5 {
                    failures.push(format!("{id} rib {} recall {:.3}", rib.label, rib.recall));
                }
            }
        }
    }
    let mut implant_dice = Vec::new();
    for k in 0..IMPLANT_CASES {
        let i = 1000 + k;
        let (_, v, truth) = phantom(i, Some(true));
        let (mask, points) = labeled_points(&v, &truth.labels);
        let seg = segment_points(&model, &mask, &points, &SegmentConfig::default(), case_seed(i)).expect("segment");
        let id = format!("implant_{i}");
        record_containment(shared, &id, &v, &seg);
        implant_dice.push(evaluate(&id, &seg, &truth.labels).expect("evaluate").dice_voxel);
    }
    let min_implant = implant_dice.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        contained > 0 && failures.is_empty() && min_implant >= 0.80,
        format!(
            "{contained} fully contained ribs in {TEST_CASES} upper-half crops, worst recall {worst:.3} (>= 0.5){}; implant voxel dice {:?} (each >= 0.80)",
            if failures.is_empty() { String::new() } else { format!(", below: {}", failures.join("; ")) },
            implant_dice.iter().map(|d| (d * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn c7_efficiency() -> Check {
    let (v, _) = generate_phantom(&PhantomConfig::default(), BASE_SEED).expect("phantom");
    let params = ModelParams::init(&NetworkConfig::default()).expect("init");
    let report = benchmark(&params, &v, &SegmentConfig::default(), 5, BASE_SEED).expect("bench");
    let json = canonical_json(&report).expect("json");
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join("acceptance_bench.json");
    std::fs::write(&path, &json).expect("write bench json");
    let ratio = report.derived["dense_over_sparse_forward"].as_f64().unwrap_or(0.0);
    let sparse = report.stage(ribpoint::pipeline::SPARSE_FORWARD).unwrap().median;
    let dense = report.stage(ribpoint::pipeline::DENSE_BASELINE).unwrap().median;
    ensure(
        ratio >= 5.0,
        format!(
            "median sparse forward {sparse:.2} s on 250000 points vs dense sweep {dense:.2} s on 256^3: ratio {ratio:.2} (>= 5); report at {}",
            path.display()
        ),
    )
}

fn c8_centerline() -> Check {
    let cfg = CenterlineConfig::default();
    let (v, truth) = generate_phantom(&PhantomConfig::default(), BASE_SEED).expect("phantom");
    let sp = v.spacing()[0] as f64;
    let (mut worst, mut total, mut outside, mut short) = (0.0f64, 0.0, 0, 0);
    for curve in &truth.curves {
        let rib = truth.labels.instance_mask(curve.label);
        let ex = extract_centerline(&rib, &cfg, Some(&truth.vertebra)).expect("centerline");
        let pts = &ex.centerline.points;
        let d = mean_symmetric_distance(pts, &curve.points) / sp;
        worst = worst.max(d);
        total += d;
        let region = dilate(&rib, &cfg.dilation);
        let dims = region.dims();
        outside += pts
            .iter()
            .filter(|p| {
                let c: Vec<i64> = (0..3).map(|k| (p[k] / sp).floor() as i64).collect();
                !dims.contains(c[0], c[1], c[2]) || !*region.get(c[0] as usize, c[1] as usize, c[2] as usize)
            })
            .count();
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let chord = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        short += (polyline_length(pts) < chord) as usize;
    }
    let n = truth.curves.len();
    ensure(
        n == 24 && worst <= 2.0 && outside == 0 && short == 0,
        format!(
            "{n} ribs, mean symmetric distance mean {:.3} / worst {worst:.3} voxels (<= 2.0); {outside} samples outside the dilated rib; {short} paths shorter than their chord",
            total / n as f64
        ),
    )
}

/// synth -> train 5 epochs -> infer -> eval, returning the metric JSON.
fn end_to_end(dir: &Path, shared: &RefCell<Shared>) -> String {
    let manifest = generate_dataset(dir, 2, 1, 1, BASE_SEED, &PhantomConfig::desk()).expect("synth");
    let load = |split: Split| -> Vec<_> {
        manifest
            .split(split)
            .map(|c| read_case(&dir.join(&c.id)).expect("read case"))
            .collect()
    };
    let points = |cases: &[CaseData]| -> Vec<PointSet> {
        cases.iter().map(|c| labeled_points(&c.volume, &c.labels).1).collect()
    };
    let (tr, dev, test) = (load(Split::Train), load(Split::Dev), load(Split::Test));
    let cfg = TrainConfig {
        epochs: 5,
        threads: 1,
        ..TrainConfig::default()
    };
    let out = train(&points(&tr), &points(&dev), &NetworkConfig::default(), &cfg, BASE_SEED).expect("train");
    let mut cases = Vec::new();
    for (c, entry) in test.iter().zip(manifest.split(Split::Test)) {
        let (mask, pts) = labeled_points(&c.volume, &c.labels);
        let seg = segment_points(&out.params, &mask, &pts, &SegmentConfig::default(), entry.seed).expect("segment");
        record_containment(shared, &format!("e2e_{}", entry.id), &c.volume, &seg);
        cases.push(evaluate(&entry.id, &seg, &c.labels).expect("evaluate"));
    }
    canonical_json(&DiceReport::from_cases(cases).expect("report")).expect("json")
}

fn c9_determinism(shared: &RefCell<Shared>) -> Check {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let ja = end_to_end(a.path(), shared);
    let jb = end_to_end(b.path(), shared);
    ensure(
        ja == jb && !ja.is_empty(),
        format!("two seeded runs: metric JSON {} bytes, identical: {}", ja.len(), ja == jb),
    )
}

fn c10_containment(shared: &RefCell<Shared>) -> Check {
    let s = shared.borrow();
    let cases = s.containment.len();
    let bad: usize = s.containment.iter().map(|c| c.1).sum();
    let which: Vec<&str> = s.containment.iter().filter(|c| c.1 > 0).map(|c| c.0.as_str()).collect();
    ensure(
        cases > 0 && bad == 0,
        format!("{cases} evaluated cases, {bad} predicted voxels outside the binarized mask {which:?}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() {
    let shared = RefCell::new(Shared::default());
    let criteria: Vec<Criterion> = vec![
        ("metric oracle", Box::new(c1_metric_oracle)),
        ("gradient correctness", Box::new(c2_gradients)),
        ("sampling oracles", Box::new(c3_sampling)),
        ("overfit one phantom", Box::new(c4_overfit)),
        ("generalization", Box::new(|| c5_generalization(&shared))),
        ("robustness", Box::new(|| c6_robustness(&shared))),
        ("efficiency", Box::new(c7_efficiency)),
        ("centerline accuracy", Box::new(c8_centerline)),
        ("determinism", Box::new(|| c9_determinism(&shared))),
        ("post-processing containment", Box::new(|| c10_containment(&shared))),
    ];
    let only: Option<Vec<usize>> = std::env::var("RIBPOINT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("[SKIP] {id:>2} {name}");
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("[PASS] {id:>2} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                println!("[FAIL] {id:>2} {name}: {d} [{secs:.1} s]");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
