//! Dataset preparation: annotator consensus, fold plans, augmentation and phantoms.

mod augment;
mod consensus;
mod folds;
mod phantom;

pub use augment::{
    apply_affine, sample_affine, warp_mask, warp_volume, AffineParams, AugmentConfig,
};
pub use consensus::consensus_mask;
pub use folds::{
    fold_dissimilarity, format_dissimilarity, make_folds, make_folds_from, target_sizes, Fold,
    FoldPlan, Subset, NUM_FOLDS,
};
pub use phantom::{
    generate_dataset, generate_phantom, shell_fraction_bounds, PhantomDatasetConfig, PhantomSpec,
};
