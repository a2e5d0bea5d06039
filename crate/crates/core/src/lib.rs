//! Planning-guided search over machine-learning pipelines.
//!
//! A grounded planner proposes pipelines (featurize → preprocess → classify),
//! R-learning turns cross-validation scores into plan-quality estimates, and
//! every plan, evaluation and decision is journaled in a knowledge store.

pub mod evaluator;
pub mod ingest;
pub mod input;
pub mod kgstore;
pub mod orchestrator;
pub mod parallel;
pub mod planner;
pub mod rl;
pub mod seed;
pub mod types;

pub use types::{
    ClassifierAlgorithm, Component, FeatureType, FeaturizerAlgorithm, Metric, PreprocessorAlgorithm,
    Representation,
};
