//! Manifests, ingestion, segmentation, source-grouped folds and the
//! synthetic dataset generator.

mod dataset;
mod folds;
mod manifest;
mod segment;
mod synth;

pub use dataset::{ingest, ingest_manifest, Dataset, Example};
pub use folds::{assign_folds, check_disjoint, make_folds, FoldAssignment};
pub use manifest::{DatasetManifest, ManifestRow};
pub use segment::{segment_audio, segment_count, SegmentConfig};
pub use synth::{
    manifest_row, synth_generate, write_synth_dataset, AuxEffects, ClassSignature, MissingRates,
    SynthRecording, SynthSpec,
};
