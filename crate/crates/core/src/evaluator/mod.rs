//! Concrete pipelines: featurization, preprocessing, classifiers,
//! hyper-parameter sampling, cross-validation, final fitting and prediction.

pub mod classifiers;
pub mod codec;
pub mod cv;
pub mod featurize;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod preprocess;

pub use cv::{cross_validate, stratified_folds, CvResult, DEFAULT_SHUFFLE_SEED};
pub use matrix::FeatureMatrix;
pub use params::{param_space, sample_params, ParamSet, ParamSpace, ParamValue};
pub use pipeline::{fit_final, predict, FeatureAssignment, Label, ModelArtifact, PipelineInstance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("incompatible component: {0}")]
    Incompatible(String),
    #[error("invalid hyper-parameters: {0}")]
    InvalidParams(String),
    #[error("empty vocabulary for column `{0}`")]
    EmptyVocabulary(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{0}: matrix too large to densify")]
    TooLarge(&'static str),
    #[error("fit diverged in {0}")]
    Diverged(String),
    #[error("v ≥ 2 required (got {0})")]
    TooFewFolds(usize),
    #[error("v > rowCount ({folds} folds, {rows} rows)")]
    TooManyFolds { folds: usize, rows: usize },
    #[error("single-class dataset")]
    SingleClass,
    #[error("fold {0}: training split contains a single class")]
    SingleClassFold(usize),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("artifact error: {0}")]
    Artifact(String),
}

impl From<crate::ingest::IngestError> for EvalError {
    fn from(e: crate::ingest::IngestError) -> Self {
        EvalError::Data(e.to_string())
    }
}
