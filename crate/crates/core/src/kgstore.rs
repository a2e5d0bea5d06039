//! Append-only knowledge store.
//!
//! Every record is one NDJSON line tagged by `kind`. The in-memory index is
//! rebuilt from the journal on open, so a restarted process sees exactly what
//! was written before it stopped. Records are immutable once appended.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::evaluator::{FeatureAssignment, Label, ParamSet, PipelineInstance};
use crate::input::SessionConfig;
use crate::planner::Plan;
use crate::types::{ClassifierAlgorithm, Metric, PreprocessorAlgorithm, Representation};

const MEAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("no record `{0}`")]
    NotFound(String),
    #[error("no evaluations")]
    NoEvaluations,
    /// Storage failure; the write may be retried.
    #[error("journal i/o: {0}")]
    Io(String),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

impl StoreError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        StoreError::Invalid { field: field.to_string(), message: message.into() }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, StoreError::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionRecord {
    #[serde(default)]
    pub id: String,
    pub job_id: String,
    pub config: SessionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub phase: u8,
    pub iteration: usize,
    pub plan: Plan,
    pub listing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub plan_id: String,
    pub phase: u8,
    /// Session-wide episode counter; defines evaluation order.
    pub episode: u64,
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub representation: Representation,
    pub featurizers: Vec<FeatureAssignment>,
    pub classifier_params: ParamSet,
    pub preprocessor_params: ParamSet,
    pub seed: u64,
    pub folds: usize,
    pub fold_scores: BTreeMap<Metric, Vec<f64>>,
    pub mean: BTreeMap<Metric, f64>,
    pub wall_seconds: f64,
}

impl EvaluationRecord {
    pub fn instance(&self) -> PipelineInstance {
        PipelineInstance {
            featurizers: self.featurizers.clone(),
            preprocessor: self.preprocessor,
            preprocessor_params: self.preprocessor_params.clone(),
            classifier: self.classifier,
            classifier_params: self.classifier_params.clone(),
            representation: self.representation,
            seed: self.seed,
        }
    }

    pub fn score(&self, metric: Metric) -> f64 {
        self.mean.get(&metric).copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// A pipeline that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FailureRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub plan_id: String,
    pub phase: u8,
    pub episode: u64,
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueUpdateRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub plan_id: String,
    pub phase: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<u64>,
    pub state: String,
    pub action: String,
    pub next: String,
    pub reward: f64,
    pub r_before: f64,
    pub r_after: f64,
    pub rho_before: f64,
    pub rho_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseRow {
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub plan_id: String,
    pub episodes: usize,
    /// Mean over episodes of each metric's cross-validated mean.
    pub mean: BTreeMap<Metric, f64>,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseSummaryRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub phase: u8,
    pub rows: Vec<PhaseRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner_plan_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_evaluation_id: Option<String>,
    pub outer_iterations: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedbackRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub command: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    pub sequence: u64,
    pub phase: u8,
    pub event: String,
    pub payload: Value,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MachineLearningModel {
    #[serde(default)]
    pub id: String,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_id: Option<String>,
    pub algorithm: ClassifierAlgorithm,
    pub features: Vec<FeatureAssignment>,
    pub preprocessor: PreprocessorAlgorithm,
    #[serde(default)]
    pub preprocessor_parameters: ParamSet,
    pub hyperparameters: ParamSet,
    pub representation: Representation,
    pub seed: u64,
    pub saved: bool,
    pub accuracy: f64,
    #[serde(default)]
    pub metrics: BTreeMap<Metric, f64>,
    pub time_to_learn_in_seconds: f64,
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_path: Option<String>,
}

impl MachineLearningModel {
    pub fn instance(&self) -> PipelineInstance {
        PipelineInstance {
            featurizers: self.features.clone(),
            preprocessor: self.preprocessor,
            preprocessor_params: self.preprocessor_parameters.clone(),
            classifier: self.algorithm,
            classifier_params: self.hyperparameters.clone(),
            representation: self.representation,
            seed: self.seed,
        }
    }

    /// Unsaved model describing an evaluated pipeline.
    pub fn from_evaluation(e: &EvaluationRecord) -> Self {
        MachineLearningModel {
            id: String::new(),
            session_id: e.session_id.clone(),
            evaluation_id: Some(e.id.clone()),
            algorithm: e.classifier,
            features: e.featurizers.clone(),
            preprocessor: e.preprocessor,
            preprocessor_parameters: e.preprocessor_params.clone(),
            hyperparameters: e.classifier_params.clone(),
            representation: e.representation,
            seed: e.seed,
            saved: false,
            accuracy: e.mean.get(&Metric::Accuracy).copied().unwrap_or(0.0),
            metrics: e.mean.clone(),
            time_to_learn_in_seconds: 0.0,
            labels: Vec::new(),
            artifact_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Record {
    Session(SessionRecord),
    Plan(PlanRecord),
    Evaluation(EvaluationRecord),
    Failure(FailureRecord),
    ValueUpdate(ValueUpdateRecord),
    PhaseSummary(PhaseSummaryRecord),
    Feedback(FeedbackRecord),
    Event(EventRecord),
    Model(MachineLearningModel),
}

impl Record {
    fn prefix(&self) -> &'static str {
        match self {
            Record::Session(_) => "ss",
            Record::Plan(_) => "pl",
            Record::Evaluation(_) => "ev",
            Record::Failure(_) => "fl",
            Record::ValueUpdate(_) => "vu",
            Record::PhaseSummary(_) => "ph",
            Record::Feedback(_) => "fb",
            Record::Event(_) => "pe",
            Record::Model(_) => "ml",
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Record::Session(r) => &r.id,
            Record::Plan(r) => &r.id,
            Record::Evaluation(r) => &r.id,
            Record::Failure(r) => &r.id,
            Record::ValueUpdate(r) => &r.id,
            Record::PhaseSummary(r) => &r.id,
            Record::Feedback(r) => &r.id,
            Record::Event(r) => &r.id,
            Record::Model(r) => &r.id,
        }
    }

    fn id_mut(&mut self) -> &mut String {
        match self {
            Record::Session(r) => &mut r.id,
            Record::Plan(r) => &mut r.id,
            Record::Evaluation(r) => &mut r.id,
            Record::Failure(r) => &mut r.id,
            Record::ValueUpdate(r) => &mut r.id,
            Record::PhaseSummary(r) => &mut r.id,
            Record::Feedback(r) => &mut r.id,
            Record::Event(r) => &mut r.id,
            Record::Model(r) => &mut r.id,
        }
    }

    pub fn session_id(&self) -> &str {
        match self {
            Record::Session(r) => &r.id,
            Record::Plan(r) => &r.session_id,
            Record::Evaluation(r) => &r.session_id,
            Record::Failure(r) => &r.session_id,
            Record::ValueUpdate(r) => &r.session_id,
            Record::PhaseSummary(r) => &r.session_id,
            Record::Feedback(r) => &r.session_id,
            Record::Event(r) => &r.session_id,
            Record::Model(r) => &r.session_id,
        }
    }
}

/// Filter for [`KgStore::query_evaluations`]; `None` fields match anything.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvaluationFilter {
    pub phase: Option<u8>,
    pub classifier: Option<ClassifierAlgorithm>,
    pub preprocessor: Option<PreprocessorAlgorithm>,
}

#[derive(Debug, Default)]
pub struct KgStore {
    records: Vec<Record>,
    by_id: HashMap<String, usize>,
    by_session: HashMap<String, Vec<usize>>,
    counters: HashMap<&'static str, u64>,
    journal: Option<(PathBuf, File)>,
}

pub type SharedStore = Arc<RwLock<KgStore>>;

pub fn shared(store: KgStore) -> SharedStore {
    Arc::new(RwLock::new(store))
}

impl KgStore {
    /// Store without a journal; records live only in memory.
    pub fn in_memory() -> Self {
        KgStore::default()
    }

    /// Opens (creating if absent) the journal at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = KgStore::default();
        if path.exists() {
            let file = File::open(&path).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| StoreError::Io(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
                store.index(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        store.journal = Some((path, file));
        Ok(store)
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    fn index(&mut self, record: Record) {
        let prefix = record.prefix();
        if let Some(n) = record.id().strip_prefix(prefix).and_then(|s| s.strip_prefix('-')).and_then(|s| s.parse::<u64>().ok()) {
            let c = self.counters.entry(prefix).or_default();
            *c = (*c).max(n);
        }
        let at = self.records.len();
        self.by_id.insert(record.id().to_string(), at);
        self.by_session.entry(record.session_id().to_string()).or_default().push(at);
        self.records.push(record);
    }

    fn next_id(&mut self, prefix: &'static str) -> String {
        let c = self.counters.entry(prefix).or_default();
        *c += 1;
        format!("{prefix}-{:04}", *c)
    }

    /// Validates, assigns an id when none is set, journals and indexes `record`.
    pub fn record(&mut self, mut record: Record) -> Result<String> {
        self.validate(&record)?;
        if record.id().is_empty() {
            let id = self.next_id(record.prefix());
            *record.id_mut() = id;
        } else if self.by_id.contains_key(record.id()) {
            return Err(StoreError::invalid("id", format!("`{}` already recorded", record.id())));
        }
        if let Some((_, file)) = &mut self.journal {
            let mut line = serde_json::to_string(&record).map_err(|e| StoreError::Io(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|e| StoreError::Io(e.to_string()))?;
            file.flush().map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let id = record.id().to_string();
        self.index(record);
        Ok(id)
    }

    fn require_session(&self, id: &str) -> Result<()> {
        match self.get(id) {
            Some(Record::Session(_)) => Ok(()),
            _ => Err(StoreError::UnknownSession(id.to_string())),
        }
    }

    fn require_plan(&self, session_id: &str, plan_id: &str) -> Result<()> {
        match self.get(plan_id) {
            Some(Record::Plan(p)) if p.session_id == session_id => Ok(()),
            _ => Err(StoreError::invalid("planId", format!("`{plan_id}` does not resolve to a plan of this session"))),
        }
    }

    fn validate(&self, record: &Record) -> Result<()> {
        if !matches!(record, Record::Session(_)) {
            self.require_session(record.session_id())?;
        }
        let phase_ok = |p: u8| (1..=3).contains(&p);
        match record {
            Record::Session(s) => {
                if s.job_id.is_empty() {
                    return Err(StoreError::invalid("jobId", "required"));
                }
            }
            Record::Plan(p) => {
                if !phase_ok(p.phase) {
                    return Err(StoreError::invalid("phase", "must be 1, 2 or 3"));
                }
            }
            Record::Evaluation(e) => {
                if !phase_ok(e.phase) {
                    return Err(StoreError::invalid("phase", "must be 1, 2 or 3"));
                }
                self.require_plan(&e.session_id, &e.plan_id)?;
                if e.folds < 2 {
                    return Err(StoreError::invalid("folds", "v ≥ 2 required"));
                }
                if e.fold_scores.is_empty() {
                    return Err(StoreError::invalid("foldScores", "at least one metric required"));
                }
                for (m, scores) in &e.fold_scores {
                    if scores.len() != e.folds {
                        return Err(StoreError::invalid("foldScores", "fold count mismatch"));
                    }
                    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                        return Err(StoreError::invalid("foldScores", format!("{m} score outside [0,1]")));
                    }
                    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                    match e.mean.get(m) {
                        Some(x) if (x - mean).abs() <= MEAN_TOLERANCE => {}
                        _ => return Err(StoreError::invalid("mean", format!("{m} mean disagrees with its folds"))),
                    }
                }
                if e.mean.len() != e.fold_scores.len() {
                    return Err(StoreError::invalid("mean", "metric without fold scores"));
                }
            }
            Record::Failure(f) => self.require_plan(&f.session_id, &f.plan_id)?,
            Record::ValueUpdate(v) => {
                self.require_plan(&v.session_id, &v.plan_id)?;
                let all = [v.reward, v.r_before, v.r_after, v.rho_before, v.rho_after];
                if all.iter().any(|x| !x.is_finite()) {
                    return Err(StoreError::invalid("reward", "non-finite value"));
                }
            }
            Record::PhaseSummary(p) => {
                if !phase_ok(p.phase) {
                    return Err(StoreError::invalid("phase", "must be 1, 2 or 3"));
                }
            }
            Record::Feedback(_) => {}
            Record::Event(e) => {
                if e.phase > 3 {
                    return Err(StoreError::invalid("phase", "must be at most 3"));
                }
            }
            Record::Model(m) => {
                if !(0.0..=1.0).contains(&m.accuracy) {
                    return Err(StoreError::invalid("accuracy", "must lie in [0,1]"));
                }
                if !(m.time_to_learn_in_seconds >= 0.0) {
                    return Err(StoreError::invalid("timeToLearnInSeconds", "must be ≥ 0"));
                }
                if let Some(e) = &m.evaluation_id {
                    if !matches!(self.get(e), Some(Record::Evaluation(_))) {
                        return Err(StoreError::invalid("evaluationId", format!("`{e}` unresolved")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn session(&self, id: &str) -> Result<&SessionRecord> {
        match self.get(id) {
            Some(Record::Session(s)) => Ok(s),
            _ => Err(StoreError::UnknownSession(id.to_string())),
        }
    }

    pub fn plan(&self, id: &str) -> Result<&PlanRecord> {
        match self.get(id) {
            Some(Record::Plan(p)) => Ok(p),
            _ => Err(StoreError::NotFound(id.to_string())),
        }
    }

    pub fn model(&self, id: &str) -> Result<&MachineLearningModel> {
        match self.get(id) {
            Some(Record::Model(m)) => Ok(m),
            _ => Err(StoreError::NotFound(id.to_string())),
        }
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Session(s) => Some(s),
            _ => None,
        })
    }

    /// Every record of `session_id` in journal order.
    pub fn session_records(&self, session_id: &str) -> Result<impl Iterator<Item = &Record>> {
        self.require_session(session_id)?;
        Ok(self.by_session.get(session_id).into_iter().flatten().map(|&i| &self.records[i]))
    }

    pub fn query_evaluations(&self, session_id: &str, filter: &EvaluationFilter) -> Result<Vec<&EvaluationRecord>> {
        let mut out: Vec<&EvaluationRecord> = self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Evaluation(e) => Some(e),
                _ => None,
            })
            .filter(|e| filter.phase.is_none_or(|p| e.phase == p))
            .filter(|e| filter.classifier.is_none_or(|c| e.classifier == c))
            .filter(|e| filter.preprocessor.is_none_or(|p| e.preprocessor == p))
            .collect();
        out.sort_by_key(|e| e.episode);
        Ok(out)
    }

    /// Evaluation with the highest `criterion` mean; the earliest id wins ties.
    pub fn best_evaluation(&self, session_id: &str, criterion: Metric) -> Result<&EvaluationRecord> {
        let mut best: Option<&EvaluationRecord> = None;
        for e in self.session_records(session_id)?.filter_map(|r| match r {
            Record::Evaluation(e) => Some(e),
            _ => None,
        }) {
            if best.is_none_or(|b| e.score(criterion) > b.score(criterion)) {
                best = Some(e);
            }
        }
        best.ok_or(StoreError::NoEvaluations)
    }

    /// The saved model built from the best evaluation if there is one,
    /// otherwise an unsaved description of that evaluation.
    pub fn query_best_model(&self, session_id: &str, criterion: Metric) -> Result<MachineLearningModel> {
        let best = self.best_evaluation(session_id, criterion)?;
        let saved = self.models(session_id)?.into_iter().rev().find(|m| m.evaluation_id.as_deref() == Some(best.id.as_str()));
        Ok(saved.cloned().unwrap_or_else(|| MachineLearningModel::from_evaluation(best)))
    }

    pub fn models(&self, session_id: &str) -> Result<Vec<&MachineLearningModel>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Model(m) => Some(m),
                _ => None,
            })
            .collect())
    }

    pub fn events(&self, session_id: &str, after_sequence: Option<u64>) -> Result<Vec<&EventRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Event(e) => Some(e),
                _ => None,
            })
            .filter(|e| after_sequence.is_none_or(|s| e.sequence > s))
            .collect())
    }

    pub fn value_updates(&self, session_id: &str) -> Result<Vec<&ValueUpdateRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::ValueUpdate(v) => Some(v),
                _ => None,
            })
            .collect())
    }

    pub fn phase_summaries(&self, session_id: &str) -> Result<Vec<&PhaseSummaryRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::PhaseSummary(p) => Some(p),
                _ => None,
            })
            .collect())
    }

    pub fn plans(&self, session_id: &str) -> Result<Vec<&PlanRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Plan(p) => Some(p),
                _ => None,
            })
            .collect())
    }

    pub fn failures(&self, session_id: &str) -> Result<Vec<&FailureRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Failure(f) => Some(f),
                _ => None,
            })
            .collect())
    }

    pub fn feedback(&self, session_id: &str) -> Result<Vec<&FeedbackRecord>> {
        Ok(self
            .session_records(session_id)?
            .filter_map(|r| match r {
                Record::Feedback(f) => Some(f),
                _ => None,
            })
            .collect())
    }
}
