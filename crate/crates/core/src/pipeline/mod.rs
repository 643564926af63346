//! Segmentation, two-stage training and inference.

pub mod encode;
pub mod infer;
pub mod prepare;
pub mod segment;
pub mod train;

pub use infer::{aggregate, best_span, infer, AggregatedPrediction};
pub use encode::{corpus_vocabulary, EncodedSample, TokenRole};
pub use prepare::{prepare_segments, PreparedSegment};
pub use segment::{chunk_ranges, segment_document, Segment, SegmentConfig};
pub use train::{entropy_stats, evaluate_dev, train_two_stage, Ablation, EntropyStats, EpochMetrics, SyncRecord, TrainConfig, TrainOutcome};
