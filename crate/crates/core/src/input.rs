//! Training requests and session configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{load_csv, CsvOptions, Dataset, IngestError};
use crate::rl::RlConfig;
use crate::types::{ClassifierAlgorithm, FeatureType, FeaturizerAlgorithm, Metric, PreprocessorAlgorithm};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_PROFILING_EPISODES: usize = 10;
pub const DEFAULT_SEARCH_EPISODES: usize = 20;
pub const DEFAULT_MAX_OUTER_ITERATIONS: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldInput {
    pub name: String,
    #[serde(rename = "type")]
    pub feature_type: FeatureType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub featurizer_name: Option<Vec<FeaturizerAlgorithm>>,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_profiling() -> usize {
    DEFAULT_PROFILING_EPISODES
}

fn default_search() -> usize {
    DEFAULT_SEARCH_EPISODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum_accuracy: Option<f64>,
    pub target_name: String,
    pub data_input: String,
    #[serde(default)]
    pub fields: Vec<FieldInput>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub selection_criteria: Metric,
    /// `None` means the default set; an explicit empty list is invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_models: Option<Vec<ClassifierAlgorithm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_preprocessors: Option<Vec<PreprocessorAlgorithm>>,
    #[serde(default = "default_profiling")]
    pub model_profiling_episode: usize,
    #[serde(default = "default_search")]
    pub model_search_episode: usize,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Accuracy
    }
}

/// One rejected field of a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl TrainingInput {
    pub fn new(data_input: impl Into<String>, target_name: impl Into<String>) -> Self {
        TrainingInput {
            model_id: None,
            minimum_accuracy: None,
            target_name: target_name.into(),
            data_input: data_input.into(),
            fields: Vec::new(),
            folds: DEFAULT_FOLDS,
            selection_criteria: Metric::Accuracy,
            candidate_models: None,
            candidate_preprocessors: None,
            model_profiling_episode: DEFAULT_PROFILING_EPISODES,
            model_search_episode: DEFAULT_SEARCH_EPISODES,
        }
    }

    pub fn classifiers(&self) -> Vec<ClassifierAlgorithm> {
        let mut c = self.candidate_models.clone().unwrap_or_else(|| ClassifierAlgorithm::TIER_A.to_vec());
        c.sort();
        c.dedup();
        c
    }

    pub fn preprocessors(&self) -> Vec<PreprocessorAlgorithm> {
        let mut p = self.candidate_preprocessors.clone().unwrap_or_else(|| PreprocessorAlgorithm::TIER_A.to_vec());
        p.sort();
        p.dedup();
        p
    }

    /// User featurizer choices keyed by field name as given.
    pub fn featurizer_overrides(&self) -> BTreeMap<String, FeaturizerAlgorithm> {
        self.fields
            .iter()
            .filter_map(|f| f.featurizer_name.as_ref().and_then(|v| v.first()).map(|z| (f.name.clone(), *z)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        if self.target_name.trim().is_empty() {
            errors.push(FieldError::new("targetName", "required"));
        }
        if self.data_input.trim().is_empty() {
            errors.push(FieldError::new("dataInput", "required"));
        }
        if self.folds < 2 {
            errors.push(FieldError::new("folds", "v ≥ 2 required"));
        }
        if let Some(m) = self.minimum_accuracy {
            if !(0.0..=1.0).contains(&m) {
                errors.push(FieldError::new("minimumAccuracy", "must lie in [0,1]"));
            }
        }
        if self.classifiers().is_empty() {
            errors.push(FieldError::new("candidateModels", "must not be empty"));
        }
        if self.preprocessors().is_empty() {
            errors.push(FieldError::new("candidatePreprocessors", "must not be empty"));
        }
        if self.model_profiling_episode < 1 {
            errors.push(FieldError::new("modelProfilingEpisode", "must be ≥ 1"));
        }
        if self.model_search_episode < 1 {
            errors.push(FieldError::new("modelSearchEpisode", "must be ≥ 1"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, f) in self.fields.iter().enumerate() {
            if !seen.insert(f.name.as_str()) {
                errors.push(FieldError::new(format!("fields[{i}].name"), format!("duplicate field `{}`", f.name)));
            }
            if same_column(&f.name, &self.target_name) {
                errors.push(FieldError::new(format!("fields[{i}].name"), "targetName is not also a feature field"));
            }
            if let Some(z) = &f.featurizer_name {
                if z.len() != 1 {
                    errors.push(FieldError::new(
                        format!("fields[{i}].featurizerName"),
                        "exactly one featurizer per field",
                    ));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Loads `dataInput`, applying declared field types and keeping only the
    /// declared fields (all columns when none are declared) plus the target.
    pub fn load_dataset(&self) -> Result<Dataset, IngestError> {
        let options = CsvOptions {
            target_name: Some(self.target_name.clone()),
            type_overrides: self.fields.iter().map(|f| (f.name.clone(), f.feature_type)).collect(),
            ..CsvOptions::default()
        };
        let dataset = load_csv(&self.data_input, &options)?;
        if self.fields.is_empty() {
            return Ok(dataset);
        }
        let mut keep = Vec::new();
        for f in &self.fields {
            let name = dataset
                .schema
                .resolve(&f.name)
                .ok_or_else(|| IngestError::Config(format!("field `{}` absent from {}", f.name, self.data_input)))?;
            keep.push(name.to_string());
        }
        keep.extend(dataset.schema.target_name.clone());
        Ok(project(&dataset, &keep))
    }
}

fn same_column(a: &str, b: &str) -> bool {
    a == b || crate::ingest::normalize_field_name(a) == crate::ingest::normalize_field_name(b)
}

/// Dataset restricted to `names`, in schema order.
pub fn project(dataset: &Dataset, names: &[String]) -> Dataset {
    let mut schema = dataset.schema.clone();
    let mut columns = Vec::new();
    schema.columns.clear();
    for (c, values) in dataset.schema.columns.iter().zip(&dataset.columns) {
        if names.contains(&c.name) {
            schema.columns.push(c.clone());
            columns.push(values.clone());
        }
    }
    Dataset { schema, columns, row_count: dataset.row_count }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    #[default]
    Random,
    Grid,
}

/// Everything a session needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionConfig {
    pub input: TrainingInput,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default = "default_max_outer")]
    pub max_outer_iterations: usize,
    /// Evaluation workers; `0` means available parallelism.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep_mode: SweepMode,
}

fn default_max_outer() -> usize {
    DEFAULT_MAX_OUTER_ITERATIONS
}

impl SessionConfig {
    pub fn new(input: TrainingInput) -> Self {
        SessionConfig {
            input,
            rl: RlConfig::default(),
            max_outer_iterations: DEFAULT_MAX_OUTER_ITERATIONS,
            workers: 0,
            seed: 0,
            sweep_mode: SweepMode::Random,
        }
    }

    pub fn folds(&self) -> usize {
        self.input.folds
    }

    pub fn profiling_episodes(&self) -> usize {
        self.input.model_profiling_episode
    }

    pub fn search_episodes(&self) -> usize {
        self.input.model_search_episode
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = self.input.validate().err().unwrap_or_default();
        if let Err(e) = self.rl.validate() {
            errors.push(FieldError::new("rl", e.to_string()));
        }
        if self.max_outer_iterations < 1 {
            errors.push(FieldError::new("maxOuterIterations", "must be ≥ 1"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_candidates() {
        let t: TrainingInput = serde_json::from_str(r#"{"targetName":"y","dataInput":"d.csv"}"#).unwrap();
        assert_eq!(t.folds, 10);
        assert_eq!(t.model_profiling_episode, 10);
        assert_eq!(t.model_search_episode, 20);
        assert!(!t.classifiers().is_empty());
        assert!(t.validate().is_ok());
    }

    #[test]
    fn validation_lists_every_bad_field() {
        let mut t = TrainingInput::new("d.csv", "y");
        t.candidate_models = Some(vec![]);
        t.folds = 1;
        t.fields.push(FieldInput {
            name: "y".into(),
            feature_type: FeatureType::Integer,
            featurizer_name: Some(vec![FeaturizerAlgorithm::OneHot, FeaturizerAlgorithm::StdScaler]),
        });
        let errs = t.validate().unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert!(fields.contains(&"candidateModels"));
        assert!(fields.contains(&"folds"));
        assert!(fields.contains(&"fields[0].featurizerName"));
        assert!(errs.iter().any(|e| e.message.contains("targetName")));
    }
}
