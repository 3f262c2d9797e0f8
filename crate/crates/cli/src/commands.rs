//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use fusionseg_core::io::{read_volume, write_mask, write_study, write_volume, DatasetManifest, MANIFEST_FILE};
use fusionseg_core::metrics::{aggregate, format_results_table, records_to_tsv};
use fusionseg_core::pipeline::{
    fold_dissimilarity, format_dissimilarity, generate_phantom, make_folds, FoldPlan,
    PhantomDatasetConfig, Subset,
};
use fusionseg_core::volume::binarize;
use fusionseg_nn::{BackboneKind, FusionConfig};
use fusionseg_train::{run_fold, Run, RunRequest, TrainConfig};

use crate::exit::{CliError, CliResult, CONFIG, IO};

/// The given seed, or a fresh random one that is announced so the run can be repeated.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>() >> 1;
        eprintln!("no --seed given; using seed {s}");
        s
    })
}

fn fresh_dir(dir: &Path) -> CliResult {
    if dir.exists() {
        let empty = fs::read_dir(dir)
            .map_err(|e| CliError::new(IO, format!("{}: {e}", dir.display())))?
            .next()
            .is_none();
        if !empty {
            return Err(CliError::new(CONFIG, format!("output directory {} is not empty", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::new(IO, format!("cannot create {}: {e}", dir.display())))
}

pub fn phantom_gen(out: &Path, count: usize, seed: Option<u64>, grid: usize) -> CliResult {
    let cfg = PhantomDatasetConfig::for_grid(grid, count, resolve_seed(seed));
    cfg.validate()?;
    fresh_dir(out)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let study = generate_phantom(&cfg.spec(i))?;
        entries.push(write_study(&study, &out.join(&study.study_id), out)?);
        log::info!("wrote {}", study.study_id);
    }
    let manifest = DatasetManifest::new(entries, out)?;
    let path = out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    println!("{count} studies on a {grid}^3 grid (seed {}) -> {}", cfg.seed, path.display());
    Ok(())
}

pub fn split(manifest: &Path, seed: Option<u64>, out: &Path) -> CliResult {
    let m = DatasetManifest::load(manifest)?;
    let plan = make_folds(&m, resolve_seed(seed))?;
    plan.save(out)?;
    println!("Percentage dissimilarity between folds (train, val, test)");
    print!("{}", format_dissimilarity(&fold_dissimilarity(&plan)));
    Ok(())
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub folds: PathBuf,
    pub fold: usize,
    pub backbone: String,
    pub fusion: String,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

pub fn train(a: &TrainArgs) -> CliResult {
    let backbone: BackboneKind = a.backbone.parse()?;
    let fusion: FusionConfig = a.fusion.parse()?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = Some(match a.seed.or(cfg.seed) {
        Some(s) => s,
        None => resolve_seed(None),
    });
    let plan = FoldPlan::load(&a.folds)?;
    let req = RunRequest {
        manifest_path: &a.manifest,
        plan: &plan,
        fold: a.fold,
        backbone,
        fusion,
        config: &cfg,
    };
    let outcome = run_fold(&req, &a.out)?;
    println!(
        "best epoch {} (val DSC {:.4}); run directory {}",
        outcome.info.best_epoch,
        outcome.info.best_val_dsc,
        a.out.display()
    );
    print!("{}", format_results_table(&[(outcome.info.label(), outcome.summary)]));
    Ok(())
}

pub fn evaluate(run: &Path, split: &str) -> CliResult {
    let subset: Subset = split.parse()?;
    let run = Run::open(run)?;
    let records = run.evaluate(subset)?;
    print!("{}", records_to_tsv(&records));
    println!();
    print!("{}", format_results_table(&[(run.info.label(), aggregate(&records)?)]));
    Ok(())
}

fn modality_file(dir: &Path, name: &str) -> CliResult<PathBuf> {
    [format!("{name}.nii.gz"), format!("{name}.nii")]
        .into_iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::new(IO, format!("no {name}.nii[.gz] in {}", dir.display())))
}

pub fn infer(run: &Path, study: &Path, out: &Path, prob: Option<&Path>) -> CliResult {
    let run = Run::open(run)?;
    let bmode = read_volume(modality_file(study, "bmode")?)?;
    let doppler = read_volume(modality_file(study, "doppler")?)?;
    let p = run.predict_volumes(&bmode, &doppler)?;
    let mask = binarize(&p, run.info.threshold)?;
    write_mask(&mask, out)?;
    if let Some(path) = prob {
        write_volume(&p, path)?;
    }
    println!("{} foreground voxels of {} -> {}", mask.count(), p.len(), out.display());
    Ok(())
}

pub fn report(runs: &[PathBuf], out: &Path) -> CliResult {
    let rep = fusionseg_train::report(runs, out)?;
    print!("{}", rep.comparison_table());
    println!("report written to {}", out.display());
    Ok(())
}
