//! Evaluation: semantic IoU, segment matching, panoptic quality and AP^r.

mod apr;
mod iou;
mod matching;
mod pq;
mod report;

pub use apr::{apr_at_threshold, apr_vol, average_precision, AprAccumulator, AprReport, Regime};
pub use iou::{semantic_iou, IouAccumulator, IouReport};
pub use matching::{match_segments, segment_class, MatchResult, SegmentOverlap, TruePositive};
pub use pq::{panoptic_quality, PqAccumulator, PqClass, PqReport, PqSplit};
pub use report::{
    evaluate_maps, report, EvalInput, EvalOptions, EvalReport, InstanceRecord, MetricSet,
    ScoreSidecar,
};
