//! Inference on studies and per-study scoring.

use fusionseg_core::metrics::{dice, evaluate_study, MetricRecord};
use fusionseg_core::volume::binarize;
use fusionseg_core::{Study, Volume};
use fusionseg_nn::SegModel;

use crate::data::{input_tensor, tensor_to_volume, NormStats};
use crate::error::Result;

/// Inference-mode probability map of one study on the study grid.
pub fn predict_study(model: &SegModel, study: &Study, stats: &NormStats) -> Result<Volume> {
    let x = input_tensor(study, &model.fusion().modalities(), stats);
    let p = model.predict(&x)?;
    tensor_to_volume(&p, 0, study.spacing())
}

/// Dice of one study at `threshold`.
pub fn study_dsc(model: &SegModel, study: &Study, stats: &NormStats, threshold: f64) -> Result<f64> {
    let p = predict_study(model, study, stats)?;
    Ok(dice(&binarize(&p, threshold)?, &study.mask)?)
}

/// Mean Dice over `studies` at `threshold`.
pub fn mean_dsc(model: &SegModel, studies: &[Study], stats: &NormStats, threshold: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in studies {
        total += study_dsc(model, s, stats, threshold)?;
    }
    Ok(total / studies.len().max(1) as f64)
}

/// DSC, Jaccard, HD95 and MSD for every study.
pub fn evaluate_studies(
    model: &SegModel,
    studies: &[Study],
    stats: &NormStats,
    threshold: f64,
) -> Result<Vec<MetricRecord>> {
    studies
        .iter()
        .map(|s| {
            let p = predict_study(model, s, stats)?;
            Ok(evaluate_study(&s.study_id, &p, &s.mask, threshold)?)
        })
        .collect()
}
