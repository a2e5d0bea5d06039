use std::collections::BTreeMap;
use std::sync::Arc;

use crate::evaluator::{cross_validate, fit_final, CvResult, EvalError, ModelArtifact, PipelineInstance};
use crate::ingest::{Dataset, DatasetSchema};
use crate::parallel::WorkerPool;
use crate::types::Metric;

/// What the orchestrator needs from a concrete pipeline realization.
pub trait PipelineEvaluator: Send + Sync {
    fn schema(&self) -> &DatasetSchema;

    fn cross_validate(
        &self,
        instance: &PipelineInstance,
        folds: usize,
        metrics: &[Metric],
        pool: &WorkerPool,
    ) -> Result<CvResult, EvalError>;

    /// Final fit on all rows; `None` when the evaluator cannot produce artifacts.
    fn fit_final(&self, instance: &PipelineInstance) -> Result<Option<ModelArtifact>, EvalError>;
}

pub struct DatasetEvaluator {
    dataset: Arc<Dataset>,
}

impl DatasetEvaluator {
    pub fn new(dataset: Dataset) -> Self {
        DatasetEvaluator { dataset: Arc::new(dataset) }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

impl PipelineEvaluator for DatasetEvaluator {
    fn schema(&self) -> &DatasetSchema {
        &self.dataset.schema
    }

    fn cross_validate(
        &self,
        instance: &PipelineInstance,
        folds: usize,
        metrics: &[Metric],
        pool: &WorkerPool,
    ) -> Result<CvResult, EvalError> {
        cross_validate(instance, &self.dataset, folds, metrics, pool)
    }

    fn fit_final(&self, instance: &PipelineInstance) -> Result<Option<ModelArtifact>, EvalError> {
        fit_final(instance, &self.dataset).map(Some)
    }
}

type ScoreFn = dyn Fn(&PipelineInstance) -> Result<BTreeMap<Metric, f64>, EvalError> + Send + Sync;

/// Deterministic stand-in: every fold scores what `score` returns.
pub struct MockEvaluator {
    schema: DatasetSchema,
    score: Box<ScoreFn>,
}

impl MockEvaluator {
    /// Same score for every metric.
    pub fn uniform(schema: DatasetSchema, score: impl Fn(&PipelineInstance) -> f64 + Send + Sync + 'static) -> Self {
        MockEvaluator {
            schema,
            score: Box::new(move |i| {
                let s = score(i);
                Ok(Metric::ALL.iter().map(|m| (*m, s)).collect())
            }),
        }
    }

    pub fn new(
        schema: DatasetSchema,
        score: impl Fn(&PipelineInstance) -> Result<BTreeMap<Metric, f64>, EvalError> + Send + Sync + 'static,
    ) -> Self {
        MockEvaluator { schema, score: Box::new(score) }
    }
}

impl PipelineEvaluator for MockEvaluator {
    fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    fn cross_validate(
        &self,
        instance: &PipelineInstance,
        folds: usize,
        metrics: &[Metric],
        _pool: &WorkerPool,
    ) -> Result<CvResult, EvalError> {
        if folds < 2 {
            return Err(EvalError::TooFewFolds(folds));
        }
        let scores = (self.score)(instance)?;
        let fold_scores = metrics
            .iter()
            .map(|m| (*m, vec![scores.get(m).copied().unwrap_or(0.0).clamp(0.0, 1.0); folds]))
            .collect();
        Ok(CvResult::from_folds(fold_scores, 0.0))
    }

    fn fit_final(&self, _instance: &PipelineInstance) -> Result<Option<ModelArtifact>, EvalError> {
        Ok(None)
    }
}
