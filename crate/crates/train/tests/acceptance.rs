//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.
//!
//! Run all criteria with `cargo test --release -p fusionseg-train --test acceptance`, or a
//! subset by number: `cargo test --release -p fusionseg-train --test acceptance -- 1 3`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusionseg_core::io::{write_dataset, DatasetManifest};
use fusionseg_core::metrics::{dice, hd95, jaccard, msd};
use fusionseg_core::pipeline::{
    consensus_mask, fold_dissimilarity, generate_dataset, make_folds, make_folds_from,
    target_sizes, PhantomDatasetConfig, Subset,
};
use fusionseg_core::{BinaryMask, Study};
use fusionseg_nn::{
    file_digest, load_checkpoint, parameter_digest, save_checkpoint, BackboneConfig, BackboneKind,
    FusionConfig, Modality, SegModel, Tensor,
};
use fusionseg_train::data::{input_tensor, unit_scaled};
use fusionseg_train::evaluate::{mean_dsc, study_dsc};
use fusionseg_train::loss::batch_loss;
use fusionseg_train::run::load_subset;
use fusionseg_train::{train, LossKind, ModelConfig, TrainConfig, Trained};

/// Outcome of one criterion: pass flag and a one-line summary.
type Verdict = (bool, String);

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // 4 and 8 share their training runs and are handled below
    let criteria: [(usize, &str, fn() -> Verdict); 6] = [
        (1, "metric oracle", metric_oracle),
        (2, "architecture contracts", architecture_contracts),
        (3, "gradient check", gradient_check),
        (5, "phantom fusion benefit", phantom_fusion),
        (6, "augmentation non-inferiority", augmentation_benefit),
        (7, "experiment protocol", experiment_protocol),
    ];
    let selected = |n: usize| only.is_empty() || only.contains(&n);
    let mut lines: BTreeMap<usize, String> = BTreeMap::new();
    let mut all_ok = true;
    let mut report = |n: usize, name: &str, (ok, detail): Verdict, secs: f64| {
        all_ok &= ok;
        let line = format!(
            "[{}] {n}. {name}: {detail} ({secs:.1} s)",
            if ok { "PASS" } else { "FAIL" }
        );
        println!("{line}");
        lines.insert(n, line);
    };
    for (n, name, run) in criteria {
        if !selected(n) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        report(n, name, v, t.elapsed().as_secs_f64());
    }
    if selected(4) || selected(8) {
        let t = Instant::now();
        let (overfit, determinism) = overfit_and_determinism();
        let secs = t.elapsed().as_secs_f64();
        if selected(4) {
            report(4, "overfit smoke test", overfit, secs);
        }
        if selected(8) {
            report(8, "determinism and round trip", determinism, secs);
        }
    }
    println!("\nacceptance summary");
    for line in lines.values() {
        println!("{line}");
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------------------
// 1. Metric oracle

fn random_mask(rng: &mut ChaCha8Rng, shape: [usize; 3], spacing: [f64; 3]) -> BinaryMask {
    let p: f64 = rng.random_range(0.05..0.7);
    BinaryMask::from_fn(shape, spacing, |_| rng.random_bool(p)).unwrap()
}

fn voxels(m: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.shape();
    let mut v = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if m.data()[[x, y, z]] == 1 {
                    v.push([x, y, z]);
                }
            }
        }
    }
    v
}

fn brute_surface(m: &BinaryMask) -> Vec<[usize; 3]> {
    let s = m.shape();
    voxels(m)
        .into_iter()
        .filter(|p| {
            (0..3).any(|a| {
                [-1isize, 1].iter().any(|&d| {
                    let q = p[a] as isize + d;
                    if q < 0 || q >= s[a] as isize {
                        return true;
                    }
                    let mut n = *p;
                    n[a] = q as usize;
                    m.data()[n] == 0
                })
            })
        })
        .collect()
}

fn brute_directed(a: &[[usize; 3]], b: &[[usize; 3]], sp: [f64; 3]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    (0..3)
                        .map(|k| ((p[k] as f64 - q[k] as f64) * sp[k]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn brute_percentile(v: &[f64], q: f64) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Checks one pair against the brute-force values; returns a description of any mismatch.
fn oracle_pair(a: &BinaryMask, b: &BinaryMask) -> Option<String> {
    let (va, vb) = (voxels(a), voxels(b));
    let inter = va.iter().filter(|p| vb.contains(p)).count();
    let (na, nb) = (va.len(), vb.len());
    let d_ref = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
    let union = na + nb - inter;
    let j_ref = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let (d, j) = (dice(a, b).unwrap(), jaccard(a, b).unwrap());
    if d != d_ref || j != j_ref {
        return Some(format!("overlap ({d}, {j}) vs ({d_ref}, {j_ref})"));
    }
    if (j - d / (2.0 - d)).abs() > 1e-12 {
        return Some(format!("jaccard identity violated: {j} vs {}", d / (2.0 - d)));
    }
    if na == 0 || nb == 0 {
        return (hd95(a, b).is_ok() || msd(a, b).is_ok())
            .then(|| "surface distance of an empty mask should be an error".into());
    }
    let sp = a.spacing();
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let ab = brute_directed(&sa, &sb, sp);
    let ba = brute_directed(&sb, &sa, sp);
    let hd_ref = brute_percentile(&ab, 95.0).max(brute_percentile(&ba, 95.0));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let msd_ref = 0.5 * (mean(&ab) + mean(&ba));
    let (h, m) = (hd95(a, b).unwrap(), msd(a, b).unwrap());
    if (h - hd_ref).abs() > 1e-9 || (m - msd_ref).abs() > 1e-9 {
        return Some(format!("surface ({h}, {m}) vs ({hd_ref}, {msd_ref})"));
    }
    None
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = Vec::new();
    for _ in 0..200 {
        let shape = [0; 3].map(|_| rng.random_range(1..=6usize));
        let spacing = [0; 3].map(|_| rng.random_range(0.5..2.0));
        pairs.push((random_mask(&mut rng, shape, spacing), random_mask(&mut rng, shape, spacing)));
    }
    let s = [1.0, 1.5, 2.0];
    let one = |p: [usize; 3]| BinaryMask::from_fn([5, 5, 5], s, |(x, y, z)| [x, y, z] == p).unwrap();
    let half = |lo: bool| BinaryMask::from_fn([6, 4, 4], s, |(x, _, _)| (x < 3) == lo).unwrap();
    let cube = BinaryMask::from_fn([5, 5, 5], s, |(x, y, z)| x.max(y).max(z) < 3).unwrap();
    pairs.push((cube.clone(), cube));
    pairs.push((half(true), half(false)));
    pairs.push((one([0, 0, 0]), one([0, 0, 0])));
    pairs.push((one([0, 0, 0]), one([4, 4, 4])));
    pairs.push((one([2, 2, 2]), BinaryMask::zeros([5, 5, 5], s).unwrap()));
    pairs.push((BinaryMask::zeros([3, 3, 3], s).unwrap(), BinaryMask::zeros([3, 3, 3], s).unwrap()));
    let failures: Vec<String> = pairs.iter().filter_map(|(a, b)| oracle_pair(a, b)).collect();
    match failures.first() {
        None => (true, format!("{} pairs match brute force exactly / within 1e-9 mm", pairs.len())),
        Some(f) => (false, format!("{} of {} pairs disagree, first: {f}", failures.len(), pairs.len())),
    }
}

// ---------------------------------------------------------------------------------------
// 2. Architecture contracts

fn all_fusions() -> [FusionConfig; 5] {
    [
        FusionConfig::single(Modality::Bmode),
        FusionConfig::single(Modality::Doppler),
        FusionConfig::early(),
        FusionConfig::intermediate(),
        FusionConfig::late(),
    ]
}

fn random_input(rng: &mut ChaCha8Rng, n: usize, c: usize, g: usize) -> Tensor {
    Tensor::from_fn(&[n, c, g, g, g], |_| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean_of(ts: &[Tensor]) -> Vec<f64> {
    let mut m = vec![0.0; ts[0].len()];
    for t in ts {
        for (a, b) in m.iter_mut().zip(t.data()) {
            *a += b / ts.len() as f64;
        }
    }
    m
}

fn contract(kind: BackboneKind, f: FusionConfig, g: usize, base: usize, depth: usize, seed: u64) -> Result<(), String> {
    let cfg = BackboneConfig::of_kind(kind).scaled(base, depth, g).for_fusion(&f);
    let model = SegModel::build(&cfg, &f, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_input(&mut rng, 1, f.input_channels(), g);
    let out = model.forward_outputs(&x, false).map_err(|e| e.to_string())?;
    if out.output.shape() != [1, 1, g, g, g] {
        return Err(format!("output shape {:?}", out.output.shape()));
    }
    if !out.output.data().iter().all(|&p| p > 0.0 && p < 1.0) {
        return Err("output outside (0, 1)".into());
    }
    if kind == BackboneKind::Unetpp {
        for heads in &out.heads {
            if heads.len() != depth {
                return Err(format!("{} deep-supervision heads, expected {depth}", heads.len()));
            }
        }
        let d = max_abs_diff(out.branches[0].data(), &mean_of(&out.heads[0]));
        if d > 1e-6 {
            return Err(format!("deep-supervision output differs from head mean by {d:e}"));
        }
    }
    if f == FusionConfig::late() {
        let d = max_abs_diff(out.output.data(), &mean_of(&out.branches));
        if out.branches.len() != 2 || d > 1e-7 {
            return Err(format!("late output differs from submodel mean by {d:e}"));
        }
    }
    let target = Tensor::from_fn(&[1, 1, g, g, g], |_| f64::from(rng.random_bool(0.3)));
    let step = model
        .train_step(&x, |p| batch_loss(LossKind::DiceBce, p, &target))
        .map_err(|e| e.to_string())?;
    for (p, grad) in model.store().params.iter().zip(&step.grads) {
        if !(grad.norm() > 0.0) {
            return Err(format!("zero gradient for {}", p.name));
        }
    }
    Ok(())
}

fn architecture_contracts() -> Verdict {
    let mut failures = Vec::new();
    let mut checked = 0;
    for (g, base, depth) in [(64, 4, 4), (16, 2, 3)] {
        for kind in [BackboneKind::Unet, BackboneKind::Unetpp] {
            for f in all_fusions() {
                checked += 1;
                if let Err(e) = contract(kind, f, g, base, depth, 17) {
                    failures.push(format!("{kind} {f} {g}^3: {e}"));
                }
            }
        }
    }
    match failures.first() {
        None => (true, format!("{checked} backbone x fusion x grid combinations satisfy every contract")),
        Some(f) => (false, format!("{} of {checked} combinations fail, first: {f}", failures.len())),
    }
}

// ---------------------------------------------------------------------------------------
// 3. Gradient check

fn loss_at(model: &SegModel, x: &Tensor, y: &Tensor) -> f64 {
    model
        .train_step(x, |p| batch_loss(LossKind::DiceBce, p, y))
        .expect("valid input")
        .loss
}

fn shifted(model: &SegModel, dir: &[Tensor], h: f64) -> SegModel {
    let mut m = model.clone();
    for (p, d) in m.store_mut().params.iter_mut().zip(dir) {
        for (v, dv) in p.value.data_mut().iter_mut().zip(d.data()) {
            *v += h * dv;
        }
    }
    m
}

fn gradient_check() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for kind in [BackboneKind::Unet, BackboneKind::Unetpp] {
        let f = FusionConfig::early();
        let cfg = BackboneConfig::of_kind(kind).scaled(2, 2, 8).for_fusion(&f);
        let model = SegModel::build(&cfg, &f, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random_input(&mut rng, 2, 2, 8);
        let y = Tensor::from_fn(&[2, 1, 8, 8, 8], |_| f64::from(rng.random_bool(0.4)));
        let step = model.train_step(&x, |p| batch_loss(LossKind::DiceBce, p, &y)).unwrap();
        for _ in 0..3 {
            let dir: Vec<Tensor> = model
                .store()
                .params
                .iter()
                .map(|p| Tensor::from_fn(p.value.shape(), |_| rng.random_range(-1.0..1.0)))
                .collect();
            let analytic: f64 = step.grads.iter().zip(&dir).map(|(g, d)| g.dot(d)).sum();
            // small enough not to cross ReLU or max-pool switches, large against f64 round-off
            let h = 1e-6;
            let numeric =
                (loss_at(&shifted(&model, &dir, h), &x, &y) - loss_at(&shifted(&model, &dir, -h), &x, &y)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
        detail.push(format!("{kind}"));
    }
    (
        worst <= 1e-3,
        format!("worst relative error {worst:.2e} over 3 directions each for {} (limit 1e-3)", detail.join(", ")),
    )
}

// ---------------------------------------------------------------------------------------
// 4 and 8. Overfit, determinism, checkpoint round trip

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        initial_lr: 1e-3,
        lr_decay: 0.1,
        lr_step: 200,
        lr_floor: 1e-6,
        batch_size: 1,
        loss: LossKind::DiceBce,
        augment: false,
        seed: Some(11),
        threshold: 0.5,
        model: ModelConfig {
            grid: 16,
            base_filters: Some(4),
            depth: 3,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn overfit_run(study: &Study, cfg: &TrainConfig) -> Trained {
    let f = FusionConfig::early();
    let bb = cfg.model.backbone(BackboneKind::Unet, &f);
    let model = SegModel::build(&bb, &f, cfg.seed.unwrap()).unwrap();
    let set = std::slice::from_ref(study);
    train(model, set, set, cfg).unwrap()
}

fn overfit_and_determinism() -> (Verdict, Verdict) {
    let cfg = overfit_config();
    let raw = generate_dataset(&PhantomDatasetConfig::for_grid(16, 1, 7)).unwrap();
    let study = unit_scaled(&raw[0]).unwrap();
    let first = overfit_run(&study, &cfg);
    let dsc = study_dsc(&first.model, &study, &first.stats, cfg.threshold).unwrap();
    let overfit = (
        dsc >= 0.95,
        format!("train DSC {dsc:.4} after {} steps (need >= 0.95)", cfg.epochs),
    );

    let second = overfit_run(&study, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let save = |t: &Trained, name: &str| {
        let p = dir.path().join(name);
        save_checkpoint(&t.model, &serde_json::json!({"best_epoch": t.history.best_epoch}), &p).unwrap();
        p
    };
    let (p1, p2) = (save(&first, "a.ckpt"), save(&second, "b.ckpt"));
    let same_history = first.history == second.history;
    let same_params = parameter_digest(&first.model) == parameter_digest(&second.model);
    let same_files = file_digest(&p1).unwrap() == file_digest(&p2).unwrap();
    let (loaded, _) = load_checkpoint(&p1).unwrap();
    let x = input_tensor(&study, &FusionConfig::early().modalities(), &first.stats);
    let drift = max_abs_diff(
        first.model.predict(&x).unwrap().data(),
        loaded.predict(&x).unwrap().data(),
    );
    let determinism = (
        same_history && same_params && same_files && drift <= 1e-6,
        format!(
            "history identical: {same_history}, parameter digest identical: {same_params}, \
             checkpoint file digest identical: {same_files}, round-trip max |diff| {drift:.1e}"
        ),
    );
    (overfit, determinism)
}

// ---------------------------------------------------------------------------------------
// 5 and 6. Phantom experiments

const SEEDS: [u64; 3] = [1, 2, 3];
const PHANTOM_GRID: usize = 16;

struct Split {
    train: Vec<Study>,
    val: Vec<Study>,
    test: Vec<Study>,
}

/// 60 phantoms written to disk, split 36/12/12 by the first fold of a fold plan and loaded
/// back through the manifest.
fn phantom_split(seed: u64, dir: &Path) -> Split {
    let studies = generate_dataset(&PhantomDatasetConfig::for_grid(PHANTOM_GRID, 60, 100 + seed)).unwrap();
    write_dataset(&studies, dir).unwrap();
    let manifest = DatasetManifest::load(dir.join("manifest.tsv")).unwrap();
    let plan = make_folds(&manifest, seed).unwrap();
    let load = |s| load_subset(&manifest, &plan, 0, s, PHANTOM_GRID).unwrap();
    Split {
        train: load(Subset::Train),
        val: load(Subset::Val),
        test: load(Subset::Test),
    }
}

fn experiment_config(seed: u64, augment: bool) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        initial_lr: 3e-3,
        lr_decay: 0.1,
        lr_step: 20,
        lr_floor: 1e-6,
        batch_size: 2,
        augment,
        seed: Some(seed),
        model: ModelConfig {
            grid: PHANTOM_GRID,
            base_filters: Some(4),
            depth: 3,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn test_dsc(split: &Split, train_set: &[Study], f: FusionConfig, cfg: &TrainConfig) -> f64 {
    let bb = cfg.model.backbone(BackboneKind::Unet, &f);
    let model = SegModel::build(&bb, &f, cfg.seed.unwrap()).unwrap();
    let t = train(model, train_set, &split.val, cfg).unwrap();
    mean_dsc(&t.model, &split.test, &t.stats, cfg.threshold).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn phantom_fusion() -> Verdict {
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let order = all_fusions();
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let split = phantom_split(seed, dir.path());
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (36, 12, 12));
        let cfg = experiment_config(seed, false);
        for f in order {
            let d = test_dsc(&split, &split.train, f, &cfg);
            println!("    seed {seed} {f:<15} test DSC {d:.4}");
            scores.entry(f.to_string()).or_default().push(d);
        }
    }
    let m = |f: FusionConfig| mean(&scores[&f.to_string()]);
    let early = m(FusionConfig::early());
    let bmode = m(FusionConfig::single(Modality::Bmode));
    let doppler = m(FusionConfig::single(Modality::Doppler));
    let (inter, late) = (m(FusionConfig::intermediate()), m(FusionConfig::late()));
    let margin = early - bmode.max(doppler);
    (
        margin >= 0.02,
        format!(
            "mean test DSC early {early:.4}, bmode {bmode:.4}, doppler {doppler:.4} \
             (margin {margin:+.4}, need >= 0.02); ungated: intermediate {inter:.4}, late {late:.4}"
        ),
    )
}

fn augmentation_benefit() -> Verdict {
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let split = phantom_split(seed, dir.path());
        let train_set = &split.train[..12];
        for (augment, out) in [(true, &mut with), (false, &mut without)] {
            let d = test_dsc(&split, train_set, FusionConfig::early(), &experiment_config(seed, augment));
            println!("    seed {seed} augment {augment:<5} test DSC {d:.4}");
            out.push(d);
        }
    }
    let gap = mean(&with) - mean(&without);
    (
        gap >= -0.01,
        format!(
            "mean test DSC with augmentation {:.4}, without {:.4} (gap {gap:+.4}, need >= -0.01)",
            mean(&with),
            mean(&without)
        ),
    )
}

// ---------------------------------------------------------------------------------------
// 7. Experiment protocol

fn random_identities(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let n = rng.random_range(10..120usize);
    let mut ids = Vec::with_capacity(n);
    let mut patient = 0;
    while ids.len() < n {
        // mostly single-study patients, some with two or three studies
        let k = match rng.random_range(0..10) {
            0 => 3,
            1 | 2 => 2,
            _ => 1,
        }
        .min(n - ids.len());
        for _ in 0..k {
            ids.push((format!("s{:04}", ids.len()), format!("p{patient:04}")));
        }
        patient += 1;
    }
    ids
}

fn check_plan(ids: &[(String, String)], seed: u64) -> Result<(), String> {
    let plan = make_folds_from(ids, seed).map_err(|e| e.to_string())?;
    plan.validate(ids).map_err(|e| e.to_string())?;
    let targets = target_sizes(ids.len());
    let patient: BTreeMap<&str, &str> = ids.iter().map(|(s, p)| (s.as_str(), p.as_str())).collect();
    for (k, fold) in plan.folds.iter().enumerate() {
        let mut owner: BTreeMap<&str, Subset> = BTreeMap::new();
        for (i, s) in Subset::ALL.into_iter().enumerate() {
            let n = fold.subset(s).len();
            if n.abs_diff(targets[i]) > 1 {
                return Err(format!("fold {k} {s}: {n} studies, target {}", targets[i]));
            }
            for id in fold.subset(s) {
                if let Some(prev) = owner.insert(patient[id.as_str()], s) {
                    if prev != s {
                        return Err(format!("fold {k}: patient leaks between {prev} and {s}"));
                    }
                }
            }
        }
    }
    let m = fold_dissimilarity(&plan);
    for (i, row) in m.iter().enumerate() {
        if row[i] != [0.0; 3] {
            return Err(format!("diagonal entry {i} is {:?}", row[i]));
        }
        if row.iter().flatten().any(|v| !(0.0..=100.0).contains(v)) {
            return Err(format!("row {i} has entries outside [0, 100]"));
        }
    }
    Ok(())
}

fn experiment_protocol() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for t in 0..100 {
        let ids = random_identities(&mut rng);
        if let Err(e) = check_plan(&ids, t) {
            failures.push(format!("manifest {t} ({} studies): {e}", ids.len()));
        }
    }
    // every 2x2x2 mask, and every ordered triple of them
    let masks: Vec<BinaryMask> = (0..256u32)
        .map(|bits| {
            BinaryMask::from_fn([2, 2, 2], [1.0; 3], |(x, y, z)| bits >> (x * 4 + y * 2 + z) & 1 == 1).unwrap()
        })
        .collect();
    let mut triples = 0usize;
    let mut bad_votes = 0usize;
    for a in 0..256u32 {
        for b in 0..256u32 {
            let pair = consensus_mask(&[masks[a as usize].clone(), masks[b as usize].clone()]).unwrap();
            bad_votes += usize::from(pair != masks[(a & b) as usize]);
            for c in 0..256u32 {
                let vote = (a & b) | (a & c) | (b & c);
                let got = consensus_mask(&[
                    masks[a as usize].clone(),
                    masks[b as usize].clone(),
                    masks[c as usize].clone(),
                ])
                .unwrap();
                triples += 1;
                bad_votes += usize::from(got != masks[vote as usize]);
            }
        }
    }
    if bad_votes > 0 {
        failures.push(format!("{bad_votes} consensus results differ from the brute-force vote"));
    }
    match failures.first() {
        None => (
            true,
            format!("100 manifests partition cleanly; {triples} mask triples and 65536 pairs match the vote"),
        ),
        Some(f) => (false, format!("{} failures, first: {f}", failures.len())),
    }
}
