use std::fs;
use std::path::Path;

use fusionseg_core::io::write_dataset;
use fusionseg_core::metrics::records_from_tsv;
use fusionseg_core::pipeline::{generate_dataset, make_folds, PhantomDatasetConfig, Subset};
use fusionseg_nn::{BackboneKind, FusionConfig, Modality};
use fusionseg_train::run::{CHECKPOINT_FILE, CV_RESULTS_FILE, TEST_METRICS_FILE};
use fusionseg_train::{report, run_cv, run_fold, Error, ModelConfig, Run, RunRequest, TrainConfig};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        initial_lr: 1e-3,
        batch_size: 2,
        augment: false,
        seed: Some(5),
        model: ModelConfig {
            grid: 8,
            base_filters: Some(2),
            depth: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn dataset(dir: &Path, count: usize) -> std::path::PathBuf {
    let studies = generate_dataset(&PhantomDatasetConfig::for_grid(8, count, 3)).unwrap();
    write_dataset(&studies, dir).unwrap();
    dir.join("manifest.tsv")
}

#[test]
fn run_directory_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest_path = dataset(&tmp.path().join("data"), 10);
    let manifest = fusionseg_core::io::DatasetManifest::load(&manifest_path).unwrap();
    let plan = make_folds(&manifest, 1).unwrap();
    let cfg = tiny_config();
    let req = RunRequest {
        manifest_path: &manifest_path,
        plan: &plan,
        fold: 2,
        backbone: BackboneKind::Unet,
        fusion: FusionConfig::early(),
        config: &cfg,
    };
    let out = tmp.path().join("run");
    let outcome = run_fold(&req, &out).unwrap();
    for f in ["config.toml", "folds.tsv", "history.tsv", "best.ckpt", "run.json", "metrics_test.tsv", "results_test.tsv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(outcome.history.epochs.len(), 2);
    assert_eq!(outcome.info.label(), "Early fusion (U-Net, without data augmentation)");

    // the stored metrics come from the stored best checkpoint
    let run = Run::open(&out).unwrap();
    assert_eq!(run.history().unwrap(), outcome.history);
    let fresh = run.evaluate(Subset::Test).unwrap();
    let stored = records_from_tsv(&fs::read_to_string(out.join(TEST_METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(fresh.len(), stored.len());
    for (a, b) in fresh.iter().zip(&stored) {
        assert_eq!(a.study_id, b.study_id);
        assert!((a.dsc - b.dsc).abs() < 1e-6);
    }

    // refuses to overwrite
    assert!(matches!(run_fold(&req, &out), Err(Error::Config(_))));

    // a second run for the report
    let req2 = RunRequest {
        fusion: FusionConfig::single(Modality::Doppler),
        ..req.clone()
    };
    run_fold(&req2, &tmp.path().join("runs2/a")).unwrap();
    let rep = report(&[out.clone(), tmp.path().join("runs2")], &tmp.path().join("report")).unwrap();
    assert_eq!(rep.groups.len(), 2);
    let table = fs::read_to_string(tmp.path().join("report/comparison.tsv")).unwrap();
    assert!(table.starts_with("Method\tDSC"));
    assert!(table.contains("Power Doppler only (U-Net, without data augmentation)"));
    let curves = fs::read_to_string(tmp.path().join("report/curves.tsv")).unwrap();
    assert_eq!(curves.lines().count(), 3);

    // tampering is detected
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&ckpt, bytes).unwrap();
    assert!(matches!(Run::open(&out), Err(Error::Integrity(_))));
}

#[test]
fn cross_validation_covers_every_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest_path = dataset(&tmp.path().join("data"), 10);
    let manifest = fusionseg_core::io::DatasetManifest::load(&manifest_path).unwrap();
    let plan = make_folds(&manifest, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_config()
    };
    let out = tmp.path().join("cv");
    let cv = run_cv(&manifest_path, &plan, BackboneKind::Unetpp, FusionConfig::late(), &cfg, &out).unwrap();
    assert_eq!(cv.folds.len(), 5);
    let pooled: usize = cv.folds.iter().map(|f| f.records.len()).sum();
    assert_eq!(cv.summary.n, pooled);
    let text = fs::read_to_string(out.join(CV_RESULTS_FILE)).unwrap();
    assert!(text.contains("Fold 1\t") && text.contains("Fold 5\t") && text.contains("All folds\t"));
    assert!(text.starts_with("# Late fusion (U-Net++, without data augmentation)"));
}
