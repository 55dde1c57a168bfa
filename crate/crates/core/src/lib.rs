//! Keyframe-accelerated visual place recognition.
//!
//! Keyframes are extracted from a database of unit feature vectors by
//! medoid silhouette clustering (or one of three baseline strategies), and
//! queries are answered by a two-stage search: match against keyframes first,
//! then refine inside the winning keyframe's adjacent region.

pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod featurestore;
pub mod retrieval;
pub mod strategies;
pub mod synth;

pub use clustering::{
    faster_msc, faster_msc_with, recompute_ams, silhouette_score, ClusteringResult, DistanceMatrix,
    Init, MedoidAssignment,
};
pub use error::{Error, Result};
pub use evaluation::{
    area_under_accuracy, is_correct, quality_gate, run_benchmark, BenchmarkConfig, BenchmarkRecord,
    BenchmarkReport, QualityVerdict, StrategySpec, ToleranceRule,
};
pub use featurestore::{
    distance, load_features, load_geotags, load_ground_truth, FeatureFormat, FeatureVector,
    FrameDatabase, GeoTag, GroundTruth, Truth,
};
pub use retrieval::{query_exhaustive, QueryReport, Region, SearchIndex, Task};
pub use strategies::{
    select_distance, select_fixed_rate, select_medoid, select_similarity, KeyframeSet, StrategyKind,
};
pub use synth::{generate, SynthData, SynthSpec};
