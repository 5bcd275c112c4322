//! Memorization scoring for self-supervised representation encoders.
//!
//! The score of a sample compares how tightly two families of encoders align
//! the representations of its augmented views: encoders that saw the sample
//! during training (`f`) against encoders that did not (`g`). The crate also
//! carries the statistics, a small contrastive training pipeline on synthetic
//! 2-D data, downstream evaluation harnesses, and empirical checks of the
//! alignment/Lipschitz bounds used to reason about outliers.

pub mod alignment;
pub mod cli;
pub mod datamodel;
pub mod downstream;
pub mod error;
pub mod memorization;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod toytrain;

pub use alignment::{alignment_loss, expected_alignment, pairwise_distance, Metric};
pub use datamodel::{
    l2_normalize, validate_manifest, RepresentationSet, SampleId, ScoreConfig, SplitManifest,
    Subset,
};
pub use error::{Error, Result};
pub use memorization::{
    normalize_scores, raw_memorization, score_report, subset_summary, threshold_sweep,
    MemorizationReport, NormalizationMode,
};
