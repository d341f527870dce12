//! Topic segmentation of time-aligned word streams.
//!
//! Shows are chopped into sentence-like units; an HMM over topic-cluster
//! unigram models decides which unit boundaries are story boundaries, and
//! decision trees over prosodic boundary features can replace or join it.
//! Hypotheses are scored with the TDT word- and time-based probe metrics.

pub mod chop;
pub mod combine;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod lm;
pub mod pipeline;
pub mod synth;
pub mod tree;

pub use chop::{chop, project_boundaries, BoundaryProjection, ChopCriterion, ChopUnit};
pub use combine::{CombinerConfig, Mode, TuneGrid, TuneReport, POST_TOPIC};
pub use corpus::{BoundaryFeatureVector, FeatureKind, FeatureSchema, FeatureTable, FeatureValue, Show, Story, Token};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport, ShowHypothesis};
pub use hmm::{Emissions, HmmConfig, SegmentHmm, SegmentationHypothesis};
pub use lm::{Stoplist, TopicClusterModel};
pub use pipeline::{Models, PreparedShow};
pub use tree::{DecisionTree, TreeTrainConfig};
