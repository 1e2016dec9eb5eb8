//! Supervised segmentation scores and the label-free SPIE score.

mod confusion;
mod report;
mod segment;
mod spie;

pub use confusion::{compute_report, confusion_accumulate, ConfusionMatrix, MetricsReport};
pub use report::{parse_per_class_csv, parse_summary, spie_csv, PerClassRow};
pub use segment::{segment_detect, SegmentMap, SegmenterParams};
pub use spie::{improvement, improvement_percent, residual, spie, SpieReport};
