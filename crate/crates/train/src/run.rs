//! Run directories and the cross-validation driver.
//!
//! A run directory holds one trained fold:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | resolved [`TrainConfig`], seed included |
//! | `folds.tsv` | the fold plan the run was drawn from |
//! | `history.tsv` | `epoch, lr, train_loss, val_dsc` per epoch |
//! | `best.ckpt` | best-validation checkpoint with normalization statistics in its metadata |
//! | `metrics_test.tsv` | `study_id, dsc, jaccard, hd95_mm, msd_mm` per test study |
//! | `results_test.tsv` | aggregate `mean ± std` table of the test split |
//! | `run.json` | [`RunInfo`] |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fusionseg_core::io::{load_study, DatasetManifest, LoadOptions};
use fusionseg_core::metrics::{aggregate, format_results_table, records_to_tsv, AggregateResult, MetricRecord};
use fusionseg_core::pipeline::{FoldPlan, Subset};
use fusionseg_core::volume::{normalize_unit, resample, Interpolation};
use fusionseg_core::{BinaryMask, Study, Volume};
use fusionseg_nn::{
    file_digest, load_checkpoint, parameter_digest, save_checkpoint, BackboneKind, FusionConfig,
    Modality, SegModel, Strategy,
};

use crate::config::TrainConfig;
use crate::data::NormStats;
use crate::error::{io, Error, Result};
use crate::evaluate::{evaluate_studies, predict_study};
use crate::trainer::{load_history, save_history, train, TrainHistory};

pub const CONFIG_FILE: &str = "config.toml";
pub const FOLDS_FILE: &str = "folds.tsv";
pub const HISTORY_FILE: &str = "history.tsv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const RUN_FILE: &str = "run.json";
pub const TEST_METRICS_FILE: &str = "metrics_test.tsv";
pub const TEST_RESULTS_FILE: &str = "results_test.tsv";
pub const CV_RESULTS_FILE: &str = "cv_results.tsv";

/// Provenance record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub manifest: PathBuf,
    pub fold: usize,
    pub backbone: BackboneKind,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub augment: bool,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub threshold: f64,
    /// SHA-256 of `best.ckpt`.
    pub checkpoint_sha256: String,
    /// SHA-256 of the checkpoint's tensors.
    pub parameter_digest: String,
}

impl RunInfo {
    /// Comparison-table row name, e.g. `Early fusion (U-Net, with data augmentation)`.
    pub fn label(&self) -> String {
        method_label(self.backbone, &self.fusion, self.augment)
    }
}

pub fn strategy_label(f: &FusionConfig) -> &'static str {
    match (f.strategy, f.modality) {
        (Strategy::Single, Some(Modality::Doppler)) => "Power Doppler only",
        (Strategy::Single, _) => "B-mode only",
        (Strategy::Early, _) => "Early fusion",
        (Strategy::Intermediate, _) => "Intermediate fusion",
        (Strategy::Late, _) => "Late fusion",
    }
}

pub fn backbone_label(k: BackboneKind) -> &'static str {
    match k {
        BackboneKind::Unet => "U-Net",
        BackboneKind::Unetpp => "U-Net++",
    }
}

pub fn method_label(backbone: BackboneKind, fusion: &FusionConfig, augment: bool) -> String {
    let aug = if augment { "with" } else { "without" };
    format!(
        "{} ({}, {aug} data augmentation)",
        strategy_label(fusion),
        backbone_label(backbone)
    )
}

/// Everything `run_fold` needs besides the output directory.
#[derive(Debug, Clone)]
pub struct RunRequest<'a> {
    pub manifest_path: &'a Path,
    pub plan: &'a FoldPlan,
    pub fold: usize,
    pub backbone: BackboneKind,
    pub fusion: FusionConfig,
    /// Must carry a seed.
    pub config: &'a TrainConfig,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub info: RunInfo,
    pub history: TrainHistory,
    pub records: Vec<MetricRecord>,
    pub summary: AggregateResult,
}

/// A run directory opened for inference or evaluation.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub config: TrainConfig,
    pub model: SegModel,
    pub stats: NormStats,
}

fn ensure_fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(io(dir))?;
        if it.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

/// Loads the studies of one subset of fold `k` onto the configured grid.
pub fn load_subset(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    fold: usize,
    subset: Subset,
    grid: usize,
) -> Result<Vec<Study>> {
    let opts = LoadOptions { grid: [grid; 3] };
    plan.fold(fold)?
        .subset(subset)
        .iter()
        .map(|id| {
            let entry = manifest.get(id).ok_or_else(|| {
                Error::Integrity(format!("fold plan names study `{id}` absent from the manifest"))
            })?;
            Ok(load_study(manifest, entry, &opts)?)
        })
        .collect()
}

fn checkpoint_meta(info: &RunInfo, stats: &NormStats) -> serde_json::Value {
    serde_json::json!({
        "norm_stats": stats,
        "threshold": info.threshold,
        "fold": info.fold,
        "seed": info.seed,
        "best_epoch": info.best_epoch,
        "best_val_dsc": info.best_val_dsc,
    })
}

/// Trains fold `req.fold` on its train split, keeps the best validation epoch, scores the
/// test split with that snapshot and writes the run directory `out`, which must be absent
/// or empty.
pub fn run_fold(req: &RunRequest<'_>, out: &Path) -> Result<RunOutcome> {
    let cfg = req.config;
    cfg.validate()?;
    let seed = cfg.seed()?;
    let fusion = cfg.model.fusion(req.fusion);
    fusion.validate()?;
    let backbone = cfg.model.backbone(req.backbone, &fusion);
    backbone.validate()?;
    let manifest = DatasetManifest::load(req.manifest_path)?;
    req.plan.validate(&manifest.identities())?;
    req.plan.fold(req.fold)?;
    ensure_fresh_dir(out)?;

    cfg.save(&out.join(CONFIG_FILE))?;
    req.plan.save(out.join(FOLDS_FILE))?;
    let load = |s| load_subset(&manifest, req.plan, req.fold, s, cfg.model.grid);
    let (train_set, val_set, test_set) = (load(Subset::Train)?, load(Subset::Val)?, load(Subset::Test)?);
    log::info!(
        "fold {}: {} train, {} val, {} test studies",
        req.fold,
        train_set.len(),
        val_set.len(),
        test_set.len()
    );

    let model = SegModel::build(&backbone, &fusion, seed)?;
    let trained = train(model, &train_set, &val_set, cfg)?;
    save_history(&trained.history, &out.join(HISTORY_FILE))?;

    let mut info = RunInfo {
        manifest: fs::canonicalize(req.manifest_path).map_err(io(req.manifest_path))?,
        fold: req.fold,
        backbone: req.backbone,
        fusion,
        seed,
        augment: cfg.augment,
        epochs: cfg.epochs,
        best_epoch: trained.history.best_epoch,
        best_val_dsc: trained.history.best_val_dsc,
        threshold: cfg.threshold,
        checkpoint_sha256: String::new(),
        parameter_digest: parameter_digest(&trained.model),
    };
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&trained.model, &checkpoint_meta(&info, &trained.stats), &ckpt)?;
    info.checkpoint_sha256 = file_digest(&ckpt)?;

    let records = evaluate_studies(&trained.model, &test_set, &trained.stats, cfg.threshold)?;
    let summary = write_evaluation(out, &info, &records)?;
    write_run_info(&info, &out.join(RUN_FILE))?;
    Ok(RunOutcome {
        info,
        history: trained.history,
        records,
        summary,
    })
}

fn write_evaluation(out: &Path, info: &RunInfo, records: &[MetricRecord]) -> Result<AggregateResult> {
    let summary = aggregate(records)?;
    let p = out.join(TEST_METRICS_FILE);
    fs::write(&p, records_to_tsv(records)).map_err(io(&p))?;
    let p = out.join(TEST_RESULTS_FILE);
    fs::write(&p, format_results_table(&[(info.label(), summary.clone())])).map_err(io(&p))?;
    Ok(summary)
}

fn write_run_info(info: &RunInfo, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(info).expect("run info serializes");
    fs::write(path, text + "\n").map_err(io(path))
}

pub fn read_run_info(path: &Path) -> Result<RunInfo> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "run record",
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl Run {
    /// Opens a run directory and verifies its checkpoint against the recorded digests.
    pub fn open(dir: &Path) -> Result<Self> {
        let info = read_run_info(&dir.join(RUN_FILE))?;
        let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        let digest = file_digest(&ckpt)?;
        if digest != info.checkpoint_sha256 {
            return Err(Error::Integrity(format!(
                "{} has digest {digest}, run record says {}",
                ckpt.display(),
                info.checkpoint_sha256
            )));
        }
        let (model, meta) = load_checkpoint(&ckpt)?;
        if parameter_digest(&model) != info.parameter_digest {
            return Err(Error::Integrity(format!(
                "{} parameters differ from the run record",
                ckpt.display()
            )));
        }
        let stats = serde_json::from_value(meta["norm_stats"].clone()).map_err(|e| Error::Format {
            what: "checkpoint metadata",
            path: ckpt.clone(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            config,
            model,
            stats,
        })
    }

    pub fn history(&self) -> Result<TrainHistory> {
        load_history(&self.dir.join(HISTORY_FILE))
    }

    pub fn fold_plan(&self) -> Result<FoldPlan> {
        Ok(FoldPlan::load(self.dir.join(FOLDS_FILE))?)
    }

    /// Grid the model was trained on; inputs are resampled onto it.
    pub fn grid(&self) -> usize {
        self.config.model.grid
    }

    /// Probability map for raw co-registered modality volumes. The volumes are preprocessed
    /// as the loader does, predicted on the run grid and resampled back to the input grid.
    pub fn predict_volumes(&self, bmode: &Volume, doppler: &Volume) -> Result<Volume> {
        if bmode.shape() != doppler.shape() {
            return Err(Error::Integrity(format!(
                "bmode shape {:?} differs from doppler shape {:?}",
                bmode.shape(),
                doppler.shape()
            )));
        }
        let grid = [self.grid(); 3];
        let b = normalize_unit(&resample(bmode, grid, Interpolation::Trilinear)?).volume;
        let d = normalize_unit(&resample(doppler, grid, Interpolation::Trilinear)?).volume;
        let spacing = b.spacing();
        let d = Volume::new(d.into_data(), spacing)?;
        let study = Study::new("input", "input", b, d, BinaryMask::zeros(grid, spacing)?)?;
        let p = predict_study(&self.model, &study, &self.stats)?;
        let back = resample(&p, bmode.shape(), Interpolation::Trilinear)?;
        Ok(Volume::new(back.into_data().mapv(|v| v.clamp(0.0, 1.0)), bmode.spacing())?)
    }

    /// Per-study metrics of one subset of the run's fold, computed afresh from the manifest.
    pub fn evaluate(&self, subset: Subset) -> Result<Vec<MetricRecord>> {
        let manifest = DatasetManifest::load(&self.info.manifest)?;
        let plan = self.fold_plan()?;
        let studies = load_subset(&manifest, &plan, self.info.fold, subset, self.grid())?;
        evaluate_studies(&self.model, &studies, &self.stats, self.info.threshold)
    }
}

/// Outcome of a full cross-validation.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<RunOutcome>,
    /// Statistics over the pooled test studies of every fold.
    pub summary: AggregateResult,
    pub label: String,
}

impl CvOutcome {
    /// Per-fold rows `Fold 1..k` followed by `All folds`.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, AggregateResult)> = self
            .folds
            .iter()
            .map(|f| (format!("Fold {}", f.info.fold + 1), f.summary.clone()))
            .collect();
        rows.push(("All folds".into(), self.summary.clone()));
        format_results_table(&rows)
    }
}

/// Runs every fold of `plan` into `out/fold{k}` and writes the per-fold table to
/// `out/cv_results.tsv`.
pub fn run_cv(
    manifest_path: &Path,
    plan: &FoldPlan,
    backbone: BackboneKind,
    fusion: FusionConfig,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<CvOutcome> {
    ensure_fresh_dir(out)?;
    let mut folds = Vec::with_capacity(plan.folds.len());
    for k in 0..plan.folds.len() {
        let req = RunRequest {
            manifest_path,
            plan,
            fold: k,
            backbone,
            fusion,
            config: cfg,
        };
        folds.push(run_fold(&req, &out.join(format!("fold{k}")))?);
    }
    let pooled: Vec<MetricRecord> = folds.iter().flat_map(|f| f.records.clone()).collect();
    let cv = CvOutcome {
        summary: aggregate(&pooled)?,
        label: method_label(backbone, &cfg.model.fusion(fusion), cfg.augment),
        folds,
    };
    let mut text = format!("# {}\n", cv.label);
    let _ = write!(text, "{}", cv.table());
    let p = out.join(CV_RESULTS_FILE);
    fs::write(&p, text).map_err(io(&p))?;
    Ok(cv)
}
