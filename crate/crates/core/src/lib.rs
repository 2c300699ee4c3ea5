//! Segment-level quality estimation for semantic segmentation.
//!
//! Pixel-wise uncertainty heatmaps computed from softmax output are
//! aggregated over connected segments of the predicted mask. A meta-classifier
//! trained on those aggregates scores each segment's probability of being a
//! low-quality prediction, and the scores drive a single-pass mask correction
//! that removes or relabels unreliable segments.

pub mod classifier;
pub mod correction;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod manifest;
pub mod maps;
pub mod npy;
pub mod pipeline;
pub mod plot;
pub mod quality;
pub mod records;
pub mod seeds;
pub mod synth;
pub mod uncertainty;

pub use classifier::{Classifier, MetaModel};
pub use correction::{correct_mask, CorrectionOutcome};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use features::{FeatureSetKind, FeatureSetSpec};
pub use geometry::{decompose, Neighbor, Segment, SegmentDecomposition, SegmentId};
pub use manifest::{DatasetManifest, ImageData, ManifestEntry};
pub use maps::{argmax_mask, ClassId, FeatureTensor, Grid, ProbabilityMap, SegmentationMask};
pub use quality::{image_miou, ImageQuality, SegmentQuality};
pub use records::{FeatureTable, SegmentRecord};
pub use synth::SynthConfig;
pub use uncertainty::UncertaintyHeatmaps;
