//! Segmentation losses with their gradients with respect to the predicted probabilities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fusionseg_core::{BinaryMask, Volume};
use fusionseg_nn::Tensor;

use crate::error::{Error, Result};

/// Smoothing constant of the soft Dice in numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "dice")]
    Dice,
    #[serde(rename = "bce")]
    Bce,
    #[default]
    #[serde(rename = "dice+bce")]
    DiceBce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dice => "dice",
            Self::Bce => "bce",
            Self::DiceBce => "dice+bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(Self::Dice),
            "bce" => Ok(Self::Bce),
            "dice+bce" => Ok(Self::DiceBce),
            _ => Err(Error::Config(format!("unknown loss `{s}` (dice|bce|dice+bce)"))),
        }
    }
}

/// `1 - (2Σpg + ε) / (Σp + Σg + ε)` and its gradient.
pub fn soft_dice_loss(p: &[f64], g: &[f64]) -> (f64, Vec<f64>) {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_SMOOTH;
    let num = 2.0 * inter + DICE_SMOOTH;
    let grad = g.iter().map(|&gi| -(2.0 * gi * s - num) / (s * s)).collect();
    (1.0 - num / s, grad)
}

/// Mean voxelwise binary cross-entropy and its gradient.
pub fn bce_loss(p: &[f64], g: &[f64]) -> (f64, Vec<f64>) {
    let n = p.len() as f64;
    let mut total = 0.0;
    let grad = p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| {
            let q = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= gi * q.ln() + (1.0 - gi) * (1.0 - q).ln();
            (q - gi) / (q * (1.0 - q)) / n
        })
        .collect();
    (total / n, grad)
}

/// Loss of one flat probability map against a flat 0/1 target.
pub fn loss_flat(kind: LossKind, p: &[f64], g: &[f64]) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Dice => soft_dice_loss(p, g),
        LossKind::Bce => bce_loss(p, g),
        LossKind::DiceBce => {
            let (a, ga) = soft_dice_loss(p, g);
            let (b, gb) = bce_loss(p, g);
            (a + b, ga.iter().zip(&gb).map(|(x, y)| x + y).collect())
        }
    }
}

/// Batch loss: the per-item loss averaged over the leading batch axis.
pub fn batch_loss(kind: LossKind, pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "prediction and target shapes differ");
    let n = pred.shape()[0];
    let per = pred.len() / n.max(1);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for i in 0..n {
        let r = i * per..(i + 1) * per;
        let (l, g) = loss_flat(kind, &pred.data()[r.clone()], &target.data()[r]);
        total += l / n as f64;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    let grad = Tensor::new(pred.shape().to_vec(), grad).expect("same shape");
    (total, grad)
}

/// Loss of a probability volume against a ground-truth mask.
pub fn loss(pred: &Volume, gt: &BinaryMask, kind: LossKind) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Config(format!(
            "loss between shapes {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let p: Vec<f64> = pred.data().iter().copied().collect();
    let g: Vec<f64> = gt.data().iter().map(|&v| f64::from(v)).collect();
    Ok(loss_flat(kind, &p, &g).0)
}
