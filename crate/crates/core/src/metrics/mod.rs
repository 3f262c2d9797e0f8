//! Overlap and surface-distance metrics.
//!
//! Surface voxels are foreground voxels with at least one background (or out-of-grid)
//! 6-neighbour. Distances are Euclidean between voxel centres in mm using the mask spacing.

mod aggregate;
mod overlap;
mod surface;

pub use aggregate::{
    aggregate, evaluate_study, format_results_table, records_from_tsv, records_to_tsv,
    AggregateResult, MetricRecord, Stat,
};
pub use overlap::{dice, jaccard};
pub use surface::{
    directed_distances, hausdorff, hd95, msd, percentile, surface_voxels, SurfaceDistances,
};
