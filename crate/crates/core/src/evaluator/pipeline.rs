//! Pipeline instances, fitted pipelines and the persisted model artifact.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::classifiers::{fit_classifier, FittedClassifier, Prediction};
use super::featurize::{fit_all, transform_all, Assignments, FittedColumn};
use super::matrix::FeatureMatrix;
use super::params::ParamSet;
use super::preprocess::{fit_preprocessor, FittedPreprocessor};
use super::EvalError;
use crate::ingest::{is_missing, ColumnValues, Dataset, DatasetRole, DatasetSchema};
use crate::planner::CompatibilityFacts;
use crate::seed;
use crate::types::{
    ClassifierAlgorithm, Component, FeatureType, FeaturizerAlgorithm, PreprocessorAlgorithm, Representation,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureAssignment {
    pub column: String,
    pub featurizer: FeaturizerAlgorithm,
    #[serde(default)]
    pub params: ParamSet,
}

/// A plan with every component's hyper-parameters fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineInstance {
    pub featurizers: Vec<FeatureAssignment>,
    pub preprocessor: PreprocessorAlgorithm,
    #[serde(default)]
    pub preprocessor_params: ParamSet,
    pub classifier: ClassifierAlgorithm,
    #[serde(default)]
    pub classifier_params: ParamSet,
    pub representation: Representation,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineInstance {
    pub fn assignments(&self) -> Assignments {
        self.featurizers.iter().map(|a| (a.column.clone(), a.featurizer, a.params.clone())).collect()
    }
}

pub fn parse_component<T: FromStr>(token: &str) -> Result<T, EvalError> {
    token.parse().map_err(|_| EvalError::UnknownComponent(token.to_string()))
}

/// Sorted class names and each row's class index.
pub fn encode_labels(dataset: &Dataset) -> Result<(Vec<String>, Vec<usize>), EvalError> {
    let raw = dataset.target_labels()?;
    let mut classes = raw.clone();
    classes.sort();
    classes.dedup();
    let y = raw.iter().map(|l| classes.binary_search(l).expect("label present")).collect();
    Ok((classes, y))
}

fn densify(x: FeatureMatrix, who: &'static str) -> Result<FeatureMatrix, EvalError> {
    match x {
        FeatureMatrix::Sparse(_) => x.into_dense().map(FeatureMatrix::Dense).ok_or(EvalError::TooLarge(who)),
        dense => Ok(dense),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FittedPipeline {
    pub featurizers: Vec<FittedColumn>,
    pub densify_before_preprocessor: bool,
    pub preprocessor: FittedPreprocessor,
    pub densify_before_classifier: bool,
    pub classifier: FittedClassifier,
}

impl FittedPipeline {
    /// Fits on `rows` of `dataset`; `y` holds the class index of each of those rows.
    pub fn fit(
        instance: &PipelineInstance,
        dataset: &Dataset,
        rows: &[usize],
        y: &[usize],
        n_classes: usize,
    ) -> Result<FittedPipeline, EvalError> {
        let facts = CompatibilityFacts::default();
        let featurizers = fit_all(dataset, &instance.assignments(), rows)?;
        let x = transform_all(dataset, &featurizers, rows)?;
        let sparse = matches!(x, FeatureMatrix::Sparse(_));
        let densify_before_preprocessor = sparse
            && (instance.representation == Representation::Dense
                || !facts.accepts_sparse(Component::Preprocessor(instance.preprocessor)));
        let x = if densify_before_preprocessor { densify(x, instance.preprocessor.as_str())? } else { x };
        let preprocessor = fit_preprocessor(
            instance.preprocessor,
            &x,
            y,
            n_classes,
            &instance.preprocessor_params,
            seed::derive(instance.seed, "preprocessor"),
        )?;
        let x = preprocessor.transform(&x)?;
        let densify_before_classifier = matches!(x, FeatureMatrix::Sparse(_))
            && !facts.accepts_sparse(Component::Classifier(instance.classifier));
        let x = if densify_before_classifier { densify(x, instance.classifier.as_str())? } else { x };
        let classifier = fit_classifier(
            instance.classifier,
            &x,
            y,
            n_classes,
            &instance.classifier_params,
            seed::derive(instance.seed, "classifier"),
        )?;
        Ok(FittedPipeline {
            featurizers,
            densify_before_preprocessor,
            preprocessor,
            densify_before_classifier,
            classifier,
        })
    }

    /// Classifier input for `rows` of `dataset`.
    pub fn features(&self, dataset: &Dataset, rows: &[usize]) -> Result<FeatureMatrix, EvalError> {
        let mut x = transform_all(dataset, &self.featurizers, rows)?;
        if self.densify_before_preprocessor {
            x = densify(x, "preprocessor input")?;
        }
        x = self.preprocessor.transform(&x)?;
        if self.densify_before_classifier {
            x = densify(x, "classifier input")?;
        }
        Ok(x)
    }

    pub fn predict(&self, dataset: &Dataset, rows: &[usize]) -> Result<Vec<Prediction>, EvalError> {
        Ok(self.classifier.predict_all(&self.features(dataset, rows)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Label {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Components {
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub featurizers: BTreeMap<String, FeaturizerAlgorithm>,
    pub representation: Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Parameters {
    pub classifier: ParamSet,
    pub preprocessor: ParamSet,
    pub featurizers: BTreeMap<String, ParamSet>,
    pub seed: u64,
}

/// Versioned, self-contained trained pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelArtifact {
    pub format_version: u32,
    pub schema: DatasetSchema,
    /// Class names indexed by the classifier's class ids.
    pub labels: Vec<String>,
    pub components: Components,
    pub parameters: Parameters,
    pub fitted_state: FittedPipeline,
}

impl ModelArtifact {
    pub fn instance(&self) -> PipelineInstance {
        let featurizers = self
            .schema
            .feature_columns()
            .filter_map(|c| {
                self.components.featurizers.get(&c.name).map(|f| FeatureAssignment {
                    column: c.name.clone(),
                    featurizer: *f,
                    params: self.parameters.featurizers.get(&c.name).cloned().unwrap_or_default(),
                })
            })
            .collect();
        PipelineInstance {
            featurizers,
            preprocessor: self.components.preprocessor,
            preprocessor_params: self.parameters.preprocessor.clone(),
            classifier: self.components.classifier,
            classifier_params: self.parameters.classifier.clone(),
            representation: self.components.representation,
            seed: self.parameters.seed,
        }
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        serde_json::to_string(self).map_err(|e| EvalError::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<ModelArtifact, EvalError> {
        let artifact: ModelArtifact = serde_json::from_str(text).map_err(|e| EvalError::Artifact(e.to_string()))?;
        if artifact.format_version != FORMAT_VERSION {
            return Err(EvalError::Artifact(format!("unsupported formatVersion {}", artifact.format_version)));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path.as_ref(), self.to_json()?)
            .map_err(|e| EvalError::Artifact(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelArtifact, EvalError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| EvalError::Artifact(format!("{}: {e}", path.as_ref().display())))?;
        ModelArtifact::from_json(&text)
    }
}

/// Fits `instance` on every row of `dataset`.
pub fn fit_final(instance: &PipelineInstance, dataset: &Dataset) -> Result<ModelArtifact, EvalError> {
    let (labels, y) = encode_labels(dataset)?;
    if labels.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let rows: Vec<usize> = (0..dataset.row_count).collect();
    let fitted_state = FittedPipeline::fit(instance, dataset, &rows, &y, labels.len())?;
    Ok(ModelArtifact {
        format_version: FORMAT_VERSION,
        schema: dataset.schema.clone(),
        labels,
        components: Components {
            classifier: instance.classifier,
            preprocessor: instance.preprocessor,
            featurizers: instance.featurizers.iter().map(|a| (a.column.clone(), a.featurizer)).collect(),
            representation: instance.representation,
        },
        parameters: Parameters {
            classifier: instance.classifier_params.clone(),
            preprocessor: instance.preprocessor_params.clone(),
            featurizers: instance.featurizers.iter().map(|a| (a.column.clone(), a.params.clone())).collect(),
            seed: instance.seed,
        },
        fitted_state,
    })
}

fn cell_text(value: &Value, ty: FeatureType) -> Option<String> {
    match value {
        Value::Null => None,
        Value::String(s) if is_missing(s) => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) if ty == FeatureType::Integer => match n.as_f64() {
            Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Some(format!("{}", f as i64)),
            _ => Some(n.to_string()),
        },
        other => Some(other.to_string()),
    }
}

/// Builds an unlabeled dataset from JSON rows keyed by (raw or normalized)
/// column name. Absent or null cells are missing; the target key is ignored.
pub fn rows_to_dataset(schema: &DatasetSchema, rows: &[Value]) -> Result<Dataset, EvalError> {
    let features: Vec<_> = schema.feature_columns().cloned().collect();
    let mut cells: Vec<Vec<Option<String>>> = vec![vec![None; rows.len()]; features.len()];
    for (r, row) in rows.iter().enumerate() {
        let object = row
            .as_object()
            .ok_or_else(|| EvalError::SchemaMismatch(format!("row {r} is not a JSON object")))?;
        for (key, value) in object {
            let name = schema
                .resolve(key)
                .ok_or_else(|| EvalError::SchemaMismatch(format!("unknown column `{key}`")))?;
            if Some(name) == schema.target_name.as_deref() {
                continue;
            }
            let j = features.iter().position(|c| c.name == name).expect("resolved feature column");
            cells[j][r] = cell_text(value, features[j].feature_type);
        }
    }
    let columns = features
        .iter()
        .zip(&cells)
        .map(|(c, col)| {
            ColumnValues::parse(&c.name, col, c.feature_type)
                .map_err(|e| EvalError::SchemaMismatch(format!("column `{}`: {e}", c.name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        schema: DatasetSchema {
            dataset_name: schema.dataset_name.clone(),
            columns: features,
            target_name: None,
            role: DatasetRole::Test,
        },
        columns,
        row_count: rows.len(),
    })
}

pub fn predict(artifact: &ModelArtifact, rows: &[Value]) -> Result<Vec<Label>, EvalError> {
    let dataset = rows_to_dataset(&artifact.schema, rows)?;
    let indices: Vec<usize> = (0..dataset.row_count).collect();
    Ok(artifact
        .fitted_state
        .predict(&dataset, &indices)?
        .into_iter()
        .map(|p| Label { value: artifact.labels[p.class].clone(), confidence: p.confidence })
        .collect())
}
