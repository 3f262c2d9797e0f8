//! The optimization loop with per-epoch validation and best-checkpoint selection.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fusionseg_core::pipeline::{apply_affine, sample_affine, AugmentConfig};
use fusionseg_core::Study;
use fusionseg_nn::{SegModel, Tensor, TrainStep};

use crate::config::TrainConfig;
use crate::data::{input_tensor, target_tensor, NormStats};
use crate::error::{io, Error, Result};
use crate::evaluate::mean_dsc;
use crate::loss::batch_loss;
use crate::optim::{lr_at, Adam};

/// Stream index reserved for the per-epoch shuffle; study `i` uses stream index `i`.
const SHUFFLE_STREAM: u64 = 0xFFFF_FFFF;

/// Random stream for `(epoch, index)` under `seed`.
pub fn stream_rng(seed: u64, epoch: usize, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dsc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
}

impl TrainHistory {
    pub const HEADER: &'static str = "epoch\tlr\ttrain_loss\tval_dsc";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{:e}\t{}\t{}", e.epoch, e.lr, e.train_loss, e.val_dsc);
        }
        s
    }

    /// Parses [`Self::to_tsv`] output; the best epoch is recomputed (first maximum).
    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "history",
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(bad(format!("expected header `{}`", Self::HEADER)));
        }
        let mut epochs = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = l.split('\t').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("bad row `{l}`")))
            };
            epochs.push(EpochRecord {
                epoch: num(0)? as usize,
                lr: num(1)?,
                train_loss: num(2)?,
                val_dsc: num(3)?,
            });
        }
        Self::from_epochs(epochs).ok_or_else(|| bad("no epochs".into()))
    }

    fn from_epochs(epochs: Vec<EpochRecord>) -> Option<Self> {
        let mut best: Option<&EpochRecord> = None;
        for e in &epochs {
            if best.is_none_or(|b| e.val_dsc > b.val_dsc) {
                best = Some(e);
            }
        }
        let (best_epoch, best_val_dsc) = best.map(|b| (b.epoch, b.val_dsc))?;
        Some(Self {
            epochs,
            best_epoch,
            best_val_dsc,
        })
    }
}

/// A trained model (the best-validation snapshot), its history and the standardization
/// statistics of its training split.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: SegModel,
    pub history: TrainHistory,
    pub stats: NormStats,
}

struct Batches<'a> {
    studies: &'a [Study],
    cfg: &'a TrainConfig,
    stats: NormStats,
    modalities: Vec<fusionseg_nn::Modality>,
    augment: Option<AugmentConfig>,
    cached: Vec<(Tensor, Tensor)>,
    seed: u64,
}

impl Batches<'_> {
    fn sample(&self, i: usize, epoch: usize) -> Result<(Tensor, Tensor)> {
        match &self.augment {
            None => Ok(self.cached[i].clone()),
            Some(aug) => {
                let mut rng = stream_rng(self.seed, epoch, i as u64);
                let params = sample_affine(aug, &mut rng);
                let s = apply_affine(&self.studies[i], &params)?;
                Ok((input_tensor(&s, &self.modalities, &self.stats), target_tensor(&s.mask)))
            }
        }
    }

    fn batch(&self, idx: &[usize], epoch: usize) -> Result<(Tensor, Tensor)> {
        let (xs, ys): (Vec<Tensor>, Vec<Tensor>) = idx
            .iter()
            .map(|&i| self.sample(i, epoch))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
    }

    fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.studies.len()).collect();
        order.shuffle(&mut stream_rng(self.seed, epoch, SHUFFLE_STREAM));
        order
    }
}

/// Trains with Adam on the step schedule, validates after every epoch by mean DSC at
/// `cfg.threshold` and returns the parameters of the best validation epoch (earliest on
/// ties). Training-split statistics standardize both splits; augmentation, when enabled,
/// is applied before standardization.
pub fn train(
    mut model: SegModel,
    train_set: &[Study],
    val_set: &[Study],
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if train_set.len() as u64 >= SHUFFLE_STREAM {
        return Err(Error::Config("training set too large".into()));
    }
    let stats = NormStats::from_studies(train_set)?;
    let modalities = model.fusion().modalities();
    let augment = cfg
        .augment
        .then(|| cfg.augmentation.for_grid(train_set[0].shape()[0]));
    let cached = if augment.is_none() {
        train_set
            .iter()
            .map(|s| (input_tensor(s, &modalities, &stats), target_tensor(&s.mask)))
            .collect()
    } else {
        Vec::new()
    };
    let batches = Batches {
        studies: train_set,
        cfg,
        stats,
        modalities,
        augment,
        cached,
        seed,
    };

    let mut adam = Adam::new(&model.store().params);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, fusionseg_nn::ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, batches.cfg);
        let mut total = 0.0;
        let order = batches.order(epoch);
        let chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, idx) in chunks.iter().enumerate() {
            let (x, y) = batches.batch(idx, epoch)?;
            let TrainStep {
                loss,
                grads,
                updates,
                ..
            } = model.train_step(&x, |p| batch_loss(cfg.loss, p, &y))?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    lr,
                    loss,
                });
            }
            model.apply_updates(updates);
            adam.step(&mut model.store_mut().params, &grads, lr);
            total += loss;
        }
        let val_dsc = mean_dsc(&model, val_set, &stats, cfg.threshold)?;
        let train_loss = total / chunks.len() as f64;
        log::info!("epoch {epoch}: lr {lr:e} train_loss {train_loss:.5} val_dsc {val_dsc:.4}");
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_dsc,
        });
        if best.as_ref().is_none_or(|(b, _)| val_dsc > *b) {
            best = Some((val_dsc, model.store().clone()));
        }
    }
    let history = TrainHistory::from_epochs(epochs).expect("at least one epoch");
    if let Some((_, store)) = best {
        *model.store_mut() = store;
    }
    Ok(Trained {
        model,
        history,
        stats,
    })
}

pub fn save_history(h: &TrainHistory, path: &Path) -> Result<()> {
    std::fs::write(path, h.to_tsv()).map_err(io(path))
}

pub fn load_history(path: &Path) -> Result<TrainHistory> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    TrainHistory::from_tsv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val_dsc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            lr: 1e-4,
            train_loss: 0.5,
            val_dsc,
        }
    }

    #[test]
    fn best_epoch_prefers_the_earliest_maximum() {
        let h = TrainHistory::from_epochs(vec![rec(0, 0.2), rec(1, 0.7), rec(2, 0.7), rec(3, 0.1)]).unwrap();
        assert_eq!((h.best_epoch, h.best_val_dsc), (1, 0.7));
        let back = TrainHistory::from_tsv(&h.to_tsv(), Path::new("h")).unwrap();
        assert_eq!(back, h);
        assert!(TrainHistory::from_tsv("nope\n", Path::new("h")).is_err());
        assert!(TrainHistory::from_tsv(&format!("{}\n", TrainHistory::HEADER), Path::new("h")).is_err());
    }

    #[test]
    fn streams_are_distinct_per_epoch_and_index() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 0, 0).random();
        let b: u64 = stream_rng(1, 1, 0).random();
        let c: u64 = stream_rng(1, 0, 1).random();
        let a2: u64 = stream_rng(1, 0, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, a2);
    }
}
