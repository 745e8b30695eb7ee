//! Overlap scores, surface and skeleton distances, area reproducibility and
//! consensus voting for label maps.

mod distance;
mod overlap;
mod report;
mod session;

pub use distance::{
    area, boundary, directed_distances, nearest_feature, offset_mm, skeleton_distances, skeletonize,
    surface_distances, SkeletonDistances, SurfaceDistances,
};
pub use overlap::{confusion, overlap_metrics, ConfusionCounts, Measure, OverlapMetrics, Undefined};
pub use report::{
    by_slice_position, class_name, evaluate_slice, positions_csv, reports_csv, summarize, table1,
    table3, MethodSummary, PositionSummary, SliceReport, EVAL_CLASSES,
};
pub use session::{majority_vote, rsd, session_stats, MeanStd, PairStats, SessionStats};
