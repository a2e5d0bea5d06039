//! Session lifecycle: pipeline profiling, the three search phases, live
//! feedback and journaling.
//!
//! A session has a single dispatcher (the thread calling [`Session::run`]).
//! Workers only cross-validate; the dispatcher owns the value table, applies
//! rewards in episode order and performs every knowledge-store write.

pub mod evaluate;
pub mod events;
pub mod feedback;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::evaluator::params::{grid, param_space, sample_params};
use crate::evaluator::{EvalError, FeatureAssignment, Label, PipelineInstance};
use crate::input::{FieldError, SessionConfig};
use crate::kgstore::{
    EvaluationRecord, EventRecord, FailureRecord, FeedbackRecord, MachineLearningModel, PhaseRow, PhaseSummaryRecord, PlanRecord,
    Record, SessionRecord, SharedStore, StoreError, ValueUpdateRecord,
};
use crate::parallel::{available_workers, WorkerPool};
use crate::planner::{
    build_domain, generate_plan, CompatibilityFacts, FeaturizerOverride, Plan, PlanOutcome, PlanStep, PlannerError,
    SearchSpaceConfig, Transition,
};
use crate::rl::{plan_quality, update, RlError, ValueTable};
use crate::seed;
use crate::types::{ClassifierAlgorithm, Component, Metric, PreprocessorAlgorithm};

pub use evaluate::{DatasetEvaluator, MockEvaluator, PipelineEvaluator};
pub use events::{EventKind, Listener, PhaseEvent};
pub use feedback::{FeedbackCommand, FeedbackError, LiveSpace, SessionControl};
pub use report::Report;

pub const ARTIFACT_FILE: &str = "model.json";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid configuration: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
    #[error("dataInput unresolved: {0}")]
    DataInput(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("planner: {0}")]
    Planner(#[from] PlannerError),
    #[error("value update: {0}")]
    Rl(#[from] RlError),
    #[error("evaluator: {0}")]
    Eval(#[from] EvalError),
    #[error("every pipeline failed to fit: {0}")]
    AllFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Completed,
    Stopped,
}

/// Externally visible lifecycle of a training job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum JobState {
    Pending,
    Phase1,
    Phase2,
    Phase3,
    Completed,
    Stopped,
    Failed,
}

impl JobState {
    /// State implied by the last event of a session.
    pub fn from_last_event(event: Option<&PhaseEvent>) -> JobState {
        let Some(e) = event else { return JobState::Pending };
        match e.kind {
            EventKind::Error => JobState::Failed,
            EventKind::SessionCompleted => match e.payload.get("status").and_then(Value::as_str) {
                Some("stopped") => JobState::Stopped,
                _ => JobState::Completed,
            },
            _ => match e.phase {
                1 => JobState::Phase1,
                2 => JobState::Phase2,
                3 => JobState::Phase3,
                _ => JobState::Pending,
            },
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Stopped | JobState::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub session_id: String,
    pub status: SessionStatus,
    pub model: MachineLearningModel,
    pub report: Report,
}

/// Shared collaborators of a session.
#[derive(Clone)]
pub struct SessionSetup {
    pub store: SharedStore,
    pub control: Arc<SessionControl>,
    pub listener: Option<Listener>,
    /// Where the trained artifact is written; `None` keeps it in memory only.
    pub artifact_dir: Option<PathBuf>,
}

impl SessionSetup {
    pub fn new(store: SharedStore) -> Self {
        SessionSetup { store, control: Arc::new(SessionControl::default()), listener: None, artifact_dir: None }
    }
}

fn write(store: &SharedStore, record: Record) -> Result<String, StoreError> {
    store.write().unwrap_or_else(|p| p.into_inner()).record(record)
}

/// Journals a new session and returns its id; job ids follow session order.
pub fn create_session(
    store: &SharedStore,
    config: &SessionConfig,
    idempotency_key: Option<String>,
) -> Result<String, StoreError> {
    let mut guard = store.write().unwrap_or_else(|p| p.into_inner());
    let job_id = format!("job-{:04}", guard.sessions().count() + 1);
    guard.record(Record::Session(SessionRecord { id: String::new(), job_id, config: config.clone(), idempotency_key }))
}

/// Persists then publishes events with per-session sequence numbers.
struct EventWriter {
    session_id: String,
    store: SharedStore,
    listener: Option<Listener>,
    sequence: u64,
}

impl EventWriter {
    fn new(store: SharedStore, session_id: &str, listener: Option<Listener>) -> Result<Self, StoreError> {
        let sequence = {
            let guard = store.read().unwrap_or_else(|p| p.into_inner());
            guard.events(session_id, None)?.last().map_or(0, |e| e.sequence)
        };
        Ok(EventWriter { session_id: session_id.to_string(), store, listener, sequence })
    }

    fn emit(&mut self, phase: u8, kind: EventKind, payload: Value) -> Result<(), StoreError> {
        let record = EventRecord {
            id: String::new(),
            session_id: self.session_id.clone(),
            sequence: self.sequence + 1,
            phase,
            event: kind.as_str().to_string(),
            payload,
            timestamp_ms: events::now_ms(),
        };
        let id = write(&self.store, Record::Event(record.clone()))?;
        self.sequence += 1;
        if let Some(listener) = &self.listener {
            listener(&PhaseEvent::from_record(&EventRecord { id, ..record }).expect("known event kind"));
        }
        Ok(())
    }
}

/// Records a terminal error for a session that could not start.
pub fn fail_session(setup: &SessionSetup, session_id: &str, reason: &str) -> Result<(), StoreError> {
    setup.control.finish();
    let mut w = EventWriter::new(setup.store.clone(), session_id, setup.listener.clone())?;
    w.emit(0, EventKind::Error, json!({ "reason": reason }))
}

/// Loads the session's dataset and runs it to completion.
pub fn run_training(setup: SessionSetup, session_id: &str) -> Result<SessionOutcome, SessionError> {
    let config = {
        let guard = setup.store.read().unwrap_or_else(|p| p.into_inner());
        guard.session(session_id)?.config.clone()
    };
    let dataset = match config.input.load_dataset() {
        Ok(d) => d,
        Err(e) => {
            let err = SessionError::DataInput(e.to_string());
            fail_session(&setup, session_id, &err.to_string())?;
            return Err(err);
        }
    };
    let evaluator: Arc<dyn PipelineEvaluator> = Arc::new(DatasetEvaluator::new(dataset));
    let session = match Session::attach(session_id, evaluator, setup.clone()) {
        Ok(s) => s,
        Err(e) => {
            fail_session(&setup, session_id, &e.to_string())?;
            return Err(e);
        }
    };
    session.run()
}

/// Journals `command` and queues it for the session's next episode boundary.
/// Returns the feedback id.
pub fn submit_feedback(
    store: &SharedStore,
    control: &SessionControl,
    session_id: &str,
    command: FeedbackCommand,
    idempotency_key: Option<String>,
) -> Result<String, FeedbackError> {
    control
        .submit(command, |cmd| {
            write(
                store,
                Record::Feedback(FeedbackRecord {
                    id: String::new(),
                    session_id: session_id.to_string(),
                    command: serde_json::to_value(cmd).expect("command serializes"),
                    idempotency_key,
                }),
            )
        })?
        .map_err(|e| match e {
            StoreError::UnknownSession(s) => FeedbackError::UnknownSession(s),
            other => FeedbackError::Store(other.to_string()),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interrupt {
    None,
    StopPhase,
    StopAll,
    MinimumReached,
    /// The scope's classifier (or the plan's components) left the search space.
    Restart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledPlan {
    pub plan: Plan,
    pub plan_id: String,
    pub evaluations: Vec<EvaluationRecord>,
    pub failures: Vec<String>,
    /// ρ-sum right after this plan was traversed.
    pub quality: f64,
}

/// Result of one pipeline-profiling loop.
#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub runs: Vec<ProfiledPlan>,
    /// Index into `runs` of the returned plan.
    pub best: Option<usize>,
    pub iterations: usize,
    pub values: ValueTable,
    pub interrupt: Interrupt,
}

impl ProfileResult {
    pub fn plan(&self) -> Option<&ProfiledPlan> {
        self.best.map(|i| &self.runs[i])
    }

    pub fn evaluation_count(&self) -> usize {
        self.runs.iter().map(|r| r.evaluations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scope {
    Classifier(ClassifierAlgorithm),
    Pipeline(ClassifierAlgorithm),
    Fixed(BTreeSet<ClassifierAlgorithm>, BTreeSet<PreprocessorAlgorithm>),
}

#[derive(Debug, Default, Clone, Copy)]
struct Flags {
    cancel: bool,
    stop_phase: bool,
    stop_all: bool,
    minimum: bool,
}

#[derive(Debug, Clone)]
struct PhaseOneResult {
    rows: BTreeMap<ClassifierAlgorithm, (PhaseRow, EvaluationRecord)>,
    selected: Option<ClassifierAlgorithm>,
}

#[derive(Debug, Clone)]
struct PhaseTwoResult {
    plan: Plan,
    best: EvaluationRecord,
}

enum PhaseThreeResult {
    Done(EvaluationRecord),
    Restart,
}

pub struct Session {
    id: String,
    config: SessionConfig,
    evaluator: Arc<dyn PipelineEvaluator>,
    store: SharedStore,
    control: Arc<SessionControl>,
    events: EventWriter,
    artifact_dir: Option<PathBuf>,
    facts: CompatibilityFacts,
    pool: WorkerPool,
    metrics: Vec<Metric>,
    live: LiveSpace,
    episode: u64,
    phase: u8,
    flags: Flags,
    report: report::Builder,
}

impl Session {
    /// Journals a new session for `config` and prepares it.
    pub fn create(
        config: SessionConfig,
        evaluator: Arc<dyn PipelineEvaluator>,
        setup: SessionSetup,
    ) -> Result<Session, SessionError> {
        config.validate().map_err(SessionError::Invalid)?;
        let id = create_session(&setup.store, &config, None)?;
        Session::attach(&id, evaluator, setup)
    }

    /// Prepares an already journaled session.
    pub fn attach(
        session_id: &str,
        evaluator: Arc<dyn PipelineEvaluator>,
        setup: SessionSetup,
    ) -> Result<Session, SessionError> {
        let config = {
            let guard = setup.store.read().unwrap_or_else(|p| p.into_inner());
            guard.session(session_id)?.config.clone()
        };
        config.validate().map_err(SessionError::Invalid)?;
        let schema = evaluator.schema();
        let mut overrides = BTreeMap::new();
        let mut errors = Vec::new();
        for (i, field) in config.input.fields.iter().enumerate() {
            let Some(f) = field.featurizer_name.as_ref().and_then(|v| v.first()) else { continue };
            match schema.resolve(&field.name) {
                Some(name) => {
                    overrides.insert(name.to_string(), *f);
                }
                None => errors.push(FieldError {
                    field: format!("fields[{i}].name"),
                    message: format!("unknown column `{}`", field.name),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(SessionError::Invalid(errors));
        }
        let live = LiveSpace {
            classifiers: config.input.classifiers().into_iter().collect(),
            preprocessors: config.input.preprocessors().into_iter().collect(),
            overrides,
        };
        setup.control.initialize(live.clone(), schema.clone());
        let workers = if config.workers == 0 { available_workers() } else { config.workers };
        let events = EventWriter::new(setup.store.clone(), session_id, setup.listener.clone())?;
        Ok(Session {
            id: session_id.to_string(),
            report: report::Builder::new(session_id, &config),
            config,
            evaluator,
            store: setup.store,
            control: setup.control,
            events,
            artifact_dir: setup.artifact_dir,
            facts: CompatibilityFacts::default(),
            pool: WorkerPool::new(workers),
            metrics: Metric::ALL.to_vec(),
            live,
            episode: 0,
            phase: 0,
            flags: Flags::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn live_space(&self) -> &LiveSpace {
        &self.live
    }

    fn criterion(&self) -> Metric {
        self.config.input.selection_criteria
    }

    fn emit(&mut self, kind: EventKind, payload: Value) -> Result<(), StoreError> {
        self.events.emit(self.phase, kind, payload)
    }

    fn record(&self, record: Record) -> Result<String, StoreError> {
        write(&self.store, record)
    }

    /// Runs every phase and trains the final model.
    pub fn run(mut self) -> Result<SessionOutcome, SessionError> {
        let result = self.run_phases();
        self.control.finish();
        if let Err(e) = &result {
            let _ = self.emit(EventKind::Error, json!({ "reason": e.to_string() }));
        }
        result
    }

    fn run_phases(&mut self) -> Result<SessionOutcome, SessionError> {
        let p1 = self.phase_one()?;
        if self.flags.stop_all {
            return self.finish_stopped();
        }
        let mut c0 = p1.selected.ok_or_else(|| SessionError::AllFailed("no classifier produced an evaluation".into()))?;
        let best = loop {
            let p2 = self.phase_two(c0, &p1)?;
            if self.flags.stop_all {
                return self.finish_stopped();
            }
            match self.phase_three(&p2)? {
                PhaseThreeResult::Done(best) => break best,
                PhaseThreeResult::Restart => {
                    if self.flags.stop_all {
                        return self.finish_stopped();
                    }
                    c0 = self.next_classifier(&p1, c0)?;
                }
            }
        };
        if self.flags.stop_all {
            return self.finish_stopped();
        }
        self.finish(&best, SessionStatus::Completed)
    }

    fn finish_stopped(&mut self) -> Result<SessionOutcome, SessionError> {
        let best = self.best_live_evaluation()?;
        self.finish(&best, SessionStatus::Stopped)
    }

    /// Highest-scoring evaluation whose components are still searched.
    fn best_live_evaluation(&self) -> Result<EvaluationRecord, SessionError> {
        let guard = self.store.read().unwrap_or_else(|p| p.into_inner());
        let mut best: Option<&EvaluationRecord> = None;
        for e in guard.query_evaluations(&self.id, &Default::default())? {
            if !self.live.classifiers.contains(&e.classifier) || !self.live.preprocessors.contains(&e.preprocessor) {
                continue;
            }
            if best.is_none_or(|b| e.score(self.criterion()) > b.score(self.criterion())) {
                best = Some(e);
            }
        }
        best.cloned().ok_or_else(|| SessionError::AllFailed("no evaluation to build a model from".into()))
    }

    fn next_classifier(&self, p1: &PhaseOneResult, current: ClassifierAlgorithm) -> Result<ClassifierAlgorithm, SessionError> {
        if self.live.classifiers.contains(&current) {
            return Ok(current);
        }
        select(&p1.rows, &self.live.classifiers, self.criterion())
            .or_else(|| self.live.classifiers.iter().next().copied())
            .ok_or_else(|| SessionError::AllFailed("no classifier left".into()))
    }

    fn finish(&mut self, best: &EvaluationRecord, status: SessionStatus) -> Result<SessionOutcome, SessionError> {
        let start = Instant::now();
        let artifact = self.evaluator.fit_final(&best.instance())?;
        let seconds = start.elapsed().as_secs_f64();
        let mut model = MachineLearningModel::from_evaluation(best);
        model.time_to_learn_in_seconds = seconds;
        if let Some(artifact) = artifact {
            model.labels = artifact.labels.iter().map(|l| Label { value: l.clone(), confidence: None }).collect();
            if let Some(dir) = &self.artifact_dir {
                std::fs::create_dir_all(dir)
                    .map_err(|e| EvalError::Artifact(format!("{}: {e}", dir.display())))?;
                let path = dir.join(ARTIFACT_FILE);
                artifact.save(&path)?;
                model.saved = true;
                model.artifact_path = Some(path.display().to_string());
            }
        }
        if let Some(wanted) = &self.config.input.model_id {
            let taken = self.store.read().unwrap_or_else(|p| p.into_inner()).get(wanted).is_some();
            if !taken {
                model.id = wanted.clone();
            }
        }
        model.id = self.record(Record::Model(model.clone()))?;
        let (evaluations, failures) = {
            let guard = self.store.read().unwrap_or_else(|p| p.into_inner());
            (guard.query_evaluations(&self.id, &Default::default())?.len(), guard.failures(&self.id)?.len())
        };
        let report = self.report.finish(status, &model, evaluations, failures);
        self.emit(
            EventKind::SessionCompleted,
            json!({
                "status": status,
                "modelId": model.id,
                "classifier": model.algorithm,
                "preprocessor": model.preprocessor,
                "accuracy": model.accuracy,
                "criterion": self.criterion(),
                "score": best.score(self.criterion()),
            }),
        )?;
        Ok(SessionOutcome { session_id: self.id.clone(), status, model, report })
    }

    // ---- feedback -------------------------------------------------------

    fn process_feedback(&mut self) -> Result<(), SessionError> {
        for queued in self.control.drain() {
            let before = self.live.clone();
            let result = self.live.apply(&queued.command, Some(self.evaluator.schema()), &self.facts);
            if result.is_ok() {
                match queued.command {
                    FeedbackCommand::CancelCurrentPipeline => self.flags.cancel = true,
                    FeedbackCommand::StopPhase => self.flags.stop_phase = true,
                    FeedbackCommand::StopAll => self.flags.stop_all = true,
                    _ => {}
                }
                self.report.feedback_applied += 1;
            }
            let diff = |a: &BTreeSet<_>, b: &BTreeSet<_>| -> Vec<String> {
                b.difference(a).map(|x: &ClassifierAlgorithm| x.to_string()).collect()
            };
            let pdiff = |a: &BTreeSet<_>, b: &BTreeSet<_>| -> Vec<String> {
                b.difference(a).map(|x: &PreprocessorAlgorithm| x.to_string()).collect()
            };
            let payload = json!({
                "feedbackId": queued.id,
                "command": queued.command,
                "status": if result.is_ok() { "applied" } else { "rejected" },
                "reason": result.as_ref().err().map(ToString::to_string),
                "diff": {
                    "addedClassifiers": diff(&before.classifiers, &self.live.classifiers),
                    "removedClassifiers": diff(&self.live.classifiers, &before.classifiers),
                    "addedPreprocessors": pdiff(&before.preprocessors, &self.live.preprocessors),
                    "removedPreprocessors": pdiff(&self.live.preprocessors, &before.preprocessors),
                    "overrides": self.live.overrides,
                },
                "classifiers": self.live.classifiers,
                "preprocessors": self.live.preprocessors,
            });
            self.emit(EventKind::FeedbackApplied, payload)?;
        }
        Ok(())
    }

    fn interruption(&self, scope: &Scope) -> Interrupt {
        if self.flags.stop_all {
            Interrupt::StopAll
        } else if self.flags.stop_phase {
            Interrupt::StopPhase
        } else if self.flags.minimum {
            Interrupt::MinimumReached
        } else {
            match scope {
                Scope::Classifier(c) | Scope::Pipeline(c) if !self.live.classifiers.contains(c) => Interrupt::Restart,
                _ => Interrupt::None,
            }
        }
    }

    fn plan_is_live(&self, plan: &Plan) -> bool {
        self.live.classifiers.contains(&plan.classifier()) && self.live.preprocessors.contains(&plan.preprocessor())
    }

    fn halted(&self) -> bool {
        self.flags.cancel || self.flags.stop_phase || self.flags.stop_all || self.flags.minimum
    }

    // ---- episodes -------------------------------------------------------

    /// Seeded sample of every component's hyper-parameters for `plan`.
    fn instantiate(&self, plan: &Plan, label: &str) -> PipelineInstance {
        let s = seed::derive(self.config.seed, label);
        PipelineInstance {
            featurizers: plan
                .featurizers()
                .into_iter()
                .map(|(column, f)| FeatureAssignment {
                    params: sample_params(Component::Featurizer(f), seed::derive(s, &format!("featurizer/{column}"))),
                    column,
                    featurizer: f,
                })
                .collect(),
            preprocessor: plan.preprocessor(),
            preprocessor_params: sample_params(Component::Preprocessor(plan.preprocessor()), seed::derive(s, "preprocessor")),
            classifier: plan.classifier(),
            classifier_params: sample_params(Component::Classifier(plan.classifier()), seed::derive(s, "classifier")),
            representation: plan.representation(),
            seed: s,
        }
    }

    /// Cross-validates `instances` in worker-sized batches. Feedback is taken
    /// between batches; `learn` sees each reward in episode order.
    fn run_episodes(
        &mut self,
        plan: &Plan,
        plan_id: &str,
        instances: Vec<PipelineInstance>,
        mut learn: impl FnMut(&mut Self, f64, u64) -> Result<(), SessionError>,
    ) -> Result<(Vec<EvaluationRecord>, Vec<String>), SessionError> {
        let mut evaluations = Vec::new();
        let mut failures = Vec::new();
        let batch = self.pool.workers().max(1);
        let mut pending = instances.into_iter().peekable();
        let mut first = true;
        while pending.peek().is_some() {
            if !first {
                self.process_feedback()?;
                if self.halted() || !self.plan_is_live(plan) {
                    break;
                }
            }
            first = false;
            let chunk: Vec<PipelineInstance> = pending.by_ref().take(batch).collect();
            let folds = self.config.folds();
            let (evaluator, metrics, pool) = (&self.evaluator, &self.metrics, &self.pool);
            let results = self.pool.map(chunk.clone(), |instance| {
                let start = Instant::now();
                evaluator.cross_validate(&instance, folds, metrics, pool).map(|cv| (cv, start.elapsed().as_secs_f64()))
            });
            for (instance, result) in chunk.into_iter().zip(results) {
                self.episode += 1;
                let episode = self.episode;
                match result {
                    Ok((cv, wall)) => {
                        let mut record = EvaluationRecord {
                            id: String::new(),
                            session_id: self.id.clone(),
                            plan_id: plan_id.to_string(),
                            phase: self.phase,
                            episode,
                            classifier: instance.classifier,
                            preprocessor: instance.preprocessor,
                            representation: instance.representation,
                            featurizers: instance.featurizers,
                            classifier_params: instance.classifier_params,
                            preprocessor_params: instance.preprocessor_params,
                            seed: instance.seed,
                            folds,
                            fold_scores: cv.fold_scores,
                            mean: cv.mean,
                            wall_seconds: wall,
                        };
                        record.id = self.record(Record::Evaluation(record.clone()))?;
                        let score = record.score(self.criterion());
                        learn(self, self.config.rl.reward_scale * score, episode)?;
                        if self.config.input.minimum_accuracy.is_some_and(|m| score >= m) {
                            self.flags.minimum = true;
                        }
                        self.emit(
                            EventKind::EpisodeCompleted,
                            json!({
                                "planId": plan_id,
                                "episode": episode,
                                "evaluationId": record.id,
                                "classifier": record.classifier,
                                "preprocessor": record.preprocessor,
                                "classifierParams": record.classifier_params,
                                "mean": record.mean,
                            }),
                        )?;
                        evaluations.push(record);
                    }
                    Err(e) => {
                        let reason = format!("{} + {}: {e}", instance.classifier, instance.preprocessor);
                        self.record(Record::Failure(FailureRecord {
                            id: String::new(),
                            session_id: self.id.clone(),
                            plan_id: plan_id.to_string(),
                            phase: self.phase,
                            episode,
                            classifier: instance.classifier,
                            preprocessor: instance.preprocessor,
                            reason: e.to_string(),
                        }))?;
                        learn(self, 0.0, episode)?;
                        self.emit(
                            EventKind::EpisodeCompleted,
                            json!({ "planId": plan_id, "episode": episode, "failure": reason }),
                        )?;
                        failures.push(reason);
                    }
                }
            }
        }
        Ok((evaluations, failures))
    }

    fn learn(
        &mut self,
        values: &mut ValueTable,
        t: &Transition,
        reward: f64,
        plan_id: &str,
        episode: Option<u64>,
    ) -> Result<(), SessionError> {
        let (state, action, next) = (t.state_key(), t.action_key(), t.next_key());
        let u = update(values, &state, &action, &next, reward, &self.config.rl)?;
        self.record(Record::ValueUpdate(ValueUpdateRecord {
            id: String::new(),
            session_id: self.id.clone(),
            plan_id: plan_id.to_string(),
            phase: self.phase,
            episode,
            state,
            action,
            next,
            reward: u.reward,
            r_before: u.r_before,
            r_after: u.r_after,
            rho_before: u.rho_before,
            rho_after: u.rho_after,
        }))?;
        Ok(())
    }

    // ---- pipeline profiling ----------------------------------------------

    fn search_config(&self, scope: &Scope) -> SearchSpaceConfig {
        let (cs, ps): (BTreeSet<_>, BTreeSet<_>) = match scope {
            Scope::Classifier(c) => ([*c].into(), [PreprocessorAlgorithm::Noop].into()),
            Scope::Pipeline(c) => ([*c].into(), self.live.preprocessors.clone()),
            Scope::Fixed(cs, ps) => (cs.clone(), ps.clone()),
        };
        let mut config = SearchSpaceConfig::new(cs, ps);
        config.featurizer_overrides = self
            .live
            .overrides
            .iter()
            .map(|(c, f)| (c.clone(), FeaturizerOverride { featurizer: *f, force: false }))
            .collect();
        config
    }

    /// Pipeline profiling over the given candidate sets, outside the phase
    /// protocol. Journals under phase 1.
    pub fn profile_pipelines(
        &mut self,
        classifiers: impl IntoIterator<Item = ClassifierAlgorithm>,
        preprocessors: impl IntoIterator<Item = PreprocessorAlgorithm>,
    ) -> Result<ProfileResult, SessionError> {
        self.phase = 1;
        let scope = Scope::Fixed(classifiers.into_iter().collect(), preprocessors.into_iter().collect());
        self.profile(&scope)
    }

    fn profile(&mut self, scope: &Scope) -> Result<ProfileResult, SessionError> {
        let mut values = ValueTable::default();
        let mut threshold = f64::NEG_INFINITY;
        let mut runs: Vec<ProfiledPlan> = Vec::new();
        let mut iterations = 0;
        let mut interrupt = Interrupt::None;
        while iterations < self.config.max_outer_iterations {
            self.process_feedback()?;
            interrupt = self.interruption(scope);
            if interrupt != Interrupt::None {
                break;
            }
            self.flags.cancel = false;
            iterations += 1;
            let domain = build_domain(self.evaluator.schema(), &self.search_config(scope), &self.facts)?;
            let plan = match generate_plan(&domain, &values, threshold) {
                PlanOutcome::Plan(p) => p,
                PlanOutcome::NoImprovingPlan { reason } => {
                    self.emit(EventKind::PipelineConverged, json!({ "reason": reason, "iterations": iterations }))?;
                    break;
                }
            };
            if let Some(last) = runs.last().filter(|r| r.plan.same_steps(&plan)) {
                let payload = json!({ "reason": "identical plan", "planId": last.plan_id, "iterations": iterations });
                self.emit(EventKind::PipelineConverged, payload)?;
                break;
            }
            let run = self.traverse(plan, iterations, &mut values)?;
            threshold = run.quality;
            runs.push(run);
            interrupt = self.interruption(scope);
            if interrupt != Interrupt::None {
                break;
            }
        }
        // Every profiled plan is re-scored against the final table so that
        // shared featurizer steps are compared on equal terms.
        let mut best: Option<(usize, f64)> = None;
        for (i, run) in runs.iter().enumerate() {
            if run.evaluations.is_empty() {
                continue;
            }
            let q = plan_quality(&run.plan, &values);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((i, q));
            }
        }
        if best.is_none() && !runs.is_empty() && interrupt == Interrupt::None {
            let reasons: BTreeSet<&String> = runs.iter().flat_map(|r| &r.failures).collect();
            if !reasons.is_empty() {
                return Err(SessionError::AllFailed(reasons.into_iter().cloned().collect::<Vec<_>>().join("; ")));
            }
        }
        Ok(ProfileResult { runs, best: best.map(|b| b.0), iterations, values, interrupt })
    }

    /// Executes one plan: −1 per featurizer and preprocessor step, then
    /// `profilingEpisodes` sampled cross-validations on the crossvalidate step.
    fn traverse(&mut self, plan: Plan, iteration: usize, values: &mut ValueTable) -> Result<ProfiledPlan, SessionError> {
        let plan_id = self.record(Record::Plan(PlanRecord {
            id: String::new(),
            session_id: self.id.clone(),
            phase: self.phase,
            iteration,
            plan: plan.clone(),
            listing: plan.listing(),
        }))?;
        self.emit(
            EventKind::PlanGenerated,
            json!({
                "planId": plan_id,
                "iteration": iteration,
                "classifier": plan.classifier(),
                "preprocessor": plan.preprocessor(),
                "estimatedQuality": plan.estimated_quality,
                "listing": plan.listing(),
            }),
        )?;
        let mut evaluations = Vec::new();
        let mut failures = Vec::new();
        for t in plan.transitions() {
            match &t.step {
                PlanStep::InitFeaturizer { .. } | PlanStep::InitPreprocessor { .. } => {
                    self.learn(values, &t, -1.0, &plan_id, None)?;
                }
                PlanStep::CrossValidate { .. } => {
                    let instances = (0..self.config.profiling_episodes())
                        .map(|j| self.instantiate(&plan, &format!("phase{}/{}/{iteration}/{j}", self.phase, plan.key())))
                        .collect();
                    let mut table = std::mem::take(values);
                    let outcome = self.run_episodes(&plan, &plan_id, instances, |s, reward, episode| {
                        s.learn(&mut table, &t, reward, &plan_id, Some(episode))
                    });
                    *values = table;
                    (evaluations, failures) = outcome?;
                }
                PlanStep::ImportTrain { .. } | PlanStep::Train { .. } => {}
            }
        }
        let quality = plan_quality(&plan, values);
        Ok(ProfiledPlan { plan, plan_id, evaluations, failures, quality })
    }

    // ---- phases ---------------------------------------------------------

    fn start_phase(&mut self, phase: u8) {
        self.phase = phase;
        self.flags.cancel = false;
        self.flags.stop_phase = false;
        self.flags.minimum = false;
    }

    fn summarize(
        &self,
        evaluations: &[&EvaluationRecord],
        classifier: ClassifierAlgorithm,
        preprocessor: PreprocessorAlgorithm,
        plan_id: &str,
    ) -> Option<(PhaseRow, EvaluationRecord)> {
        let best = best_of(evaluations.iter().copied(), self.criterion())?;
        let n = evaluations.len() as f64;
        let mean = self
            .metrics
            .iter()
            .map(|m| (*m, evaluations.iter().map(|e| e.score(*m)).sum::<f64>() / n))
            .collect();
        let row = PhaseRow {
            classifier,
            preprocessor,
            plan_id: plan_id.to_string(),
            episodes: evaluations.len(),
            mean,
            best: best.score(self.criterion()),
        };
        Some((row, best.clone()))
    }

    fn phase_one(&mut self) -> Result<PhaseOneResult, SessionError> {
        self.start_phase(1);
        let mut rows = BTreeMap::new();
        let mut attempted = BTreeSet::new();
        let mut iterations = 0;
        let mut failures = Vec::new();
        let mut stopped_early = false;
        loop {
            self.process_feedback()?;
            if self.flags.stop_all || self.flags.stop_phase || self.flags.minimum {
                stopped_early = true;
                break;
            }
            let Some(c) = self.live.classifiers.iter().find(|c| !attempted.contains(*c)).copied() else { break };
            attempted.insert(c);
            let run = match self.profile(&Scope::Classifier(c)) {
                Err(SessionError::AllFailed(reason)) => {
                    failures.push(reason);
                    continue;
                }
                other => other?,
            };
            iterations += run.iterations;
            if let Some(p) = run.plan() {
                let evals: Vec<&EvaluationRecord> = run.runs.iter().flat_map(|r| &r.evaluations).collect();
                if let Some(row) = self.summarize(&evals, c, PreprocessorAlgorithm::Noop, &p.plan_id) {
                    rows.insert(c, row);
                }
            }
        }
        let selected = select(&rows, &self.live.classifiers, self.criterion());
        if selected.is_none() && !self.flags.stop_all {
            return Err(SessionError::AllFailed(if failures.is_empty() {
                "phase 1 produced no evaluation".into()
            } else {
                failures.join("; ")
            }));
        }
        let table: Vec<PhaseRow> = rows.values().map(|(r, _)| r.clone()).collect();
        self.record(Record::PhaseSummary(PhaseSummaryRecord {
            id: String::new(),
            session_id: self.id.clone(),
            phase: 1,
            rows: table.clone(),
            winner_plan_id: selected.and_then(|c| rows.get(&c)).map(|(r, _)| r.plan_id.clone()),
            best_evaluation_id: selected.and_then(|c| rows.get(&c)).map(|(_, e)| e.id.clone()),
            outer_iterations: iterations,
            stopped_early,
        }))?;
        self.emit(EventKind::PhaseCompleted, json!({ "phase": 1, "rows": table, "selected": selected }))?;
        self.report.phase_one(&table, selected, iterations, stopped_early);
        Ok(PhaseOneResult { rows, selected })
    }

    fn phase_two(&mut self, mut c0: ClassifierAlgorithm, p1: &PhaseOneResult) -> Result<PhaseTwoResult, SessionError> {
        self.start_phase(2);
        let run = loop {
            let run = self.profile(&Scope::Pipeline(c0))?;
            if run.interrupt == Interrupt::Restart {
                c0 = self.next_classifier(p1, c0)?;
                continue;
            }
            break run;
        };
        let mut rows = Vec::new();
        for p in PreprocessorAlgorithm::ALL {
            let evals: Vec<&EvaluationRecord> =
                run.runs.iter().flat_map(|r| &r.evaluations).filter(|e| e.preprocessor == *p).collect();
            let plan_id = run.runs.iter().rev().find(|r| r.plan.preprocessor() == *p).map(|r| r.plan_id.clone());
            if let Some(plan_id) = plan_id {
                if let Some((row, _)) = self.summarize(&evals, c0, *p, &plan_id) {
                    rows.push(row);
                }
            }
        }
        let chosen = match run.plan() {
            Some(p) => {
                let key = p.plan.key();
                let evals = run.runs.iter().filter(|r| r.plan.key() == key).flat_map(|r| &r.evaluations);
                let best = best_of(evals, self.criterion()).expect("returned plan has evaluations").clone();
                Some((p.plan.clone(), p.plan_id.clone(), best))
            }
            None => match p1.rows.get(&c0) {
                Some((row, best)) => {
                    let plan = self.store.read().unwrap_or_else(|p| p.into_inner()).plan(&row.plan_id)?.plan.clone();
                    Some((plan, row.plan_id.clone(), best.clone()))
                }
                None => None,
            },
        };
        let Some((plan, plan_id, best)) = chosen else {
            return Err(SessionError::AllFailed(format!("no successful evaluation for {c0}")));
        };
        let stopped_early = run.interrupt != Interrupt::None;
        self.record(Record::PhaseSummary(PhaseSummaryRecord {
            id: String::new(),
            session_id: self.id.clone(),
            phase: 2,
            rows: rows.clone(),
            winner_plan_id: Some(plan_id.clone()),
            best_evaluation_id: Some(best.id.clone()),
            outer_iterations: run.iterations,
            stopped_early,
        }))?;
        self.emit(
            EventKind::PhaseCompleted,
            json!({
                "phase": 2,
                "rows": rows,
                "selected": { "planId": plan_id, "classifier": plan.classifier(), "preprocessor": plan.preprocessor() },
            }),
        )?;
        self.report.phase_two(&rows, &plan, run.iterations, stopped_early);
        Ok(PhaseTwoResult { plan, best })
    }

    fn sweep_instances(&self, plan: &Plan, base: &EvaluationRecord) -> Vec<PipelineInstance> {
        let n = self.config.search_episodes();
        match self.config.sweep_mode {
            crate::input::SweepMode::Random => {
                (0..n).map(|j| self.instantiate(plan, &format!("phase3/{}/{j}", plan.key()))).collect()
            }
            crate::input::SweepMode::Grid => {
                let spaces = [
                    param_space(Component::Classifier(plan.classifier())),
                    param_space(Component::Preprocessor(plan.preprocessor())),
                ];
                grid(&spaces, n)
                    .into_iter()
                    .enumerate()
                    .map(|(j, sets)| PipelineInstance {
                        featurizers: base.featurizers.clone(),
                        preprocessor: plan.preprocessor(),
                        preprocessor_params: sets[1].clone(),
                        classifier: plan.classifier(),
                        classifier_params: sets[0].clone(),
                        representation: plan.representation(),
                        seed: seed::derive(self.config.seed, &format!("phase3/grid/{j}")),
                    })
                    .collect()
            }
        }
    }

    fn phase_three(&mut self, p2: &PhaseTwoResult) -> Result<PhaseThreeResult, SessionError> {
        self.start_phase(3);
        self.process_feedback()?;
        if self.flags.stop_all {
            return Ok(PhaseThreeResult::Done(p2.best.clone()));
        }
        if !self.plan_is_live(&p2.plan) {
            return Ok(PhaseThreeResult::Restart);
        }
        let plan = p2.plan.clone();
        let plan_id = self.record(Record::Plan(PlanRecord {
            id: String::new(),
            session_id: self.id.clone(),
            phase: 3,
            iteration: 1,
            plan: plan.clone(),
            listing: plan.listing(),
        }))?;
        self.emit(
            EventKind::PlanGenerated,
            json!({
                "planId": plan_id,
                "iteration": 1,
                "classifier": plan.classifier(),
                "preprocessor": plan.preprocessor(),
                "estimatedQuality": plan.estimated_quality,
                "listing": plan.listing(),
            }),
        )?;
        let instances = self.sweep_instances(&plan, &p2.best);
        let (evaluations, failures) = self.run_episodes(&plan, &plan_id, instances, |_, _, _| Ok(()))?;
        if !self.plan_is_live(&plan) && !self.flags.stop_all {
            return Ok(PhaseThreeResult::Restart);
        }
        if evaluations.is_empty() && !failures.is_empty() && !self.halted() {
            return Err(SessionError::AllFailed(failures.join("; ")));
        }
        let best = best_of(evaluations.iter(), self.criterion()).cloned().unwrap_or_else(|| p2.best.clone());
        let stopped_early = self.halted();
        self.record(Record::PhaseSummary(PhaseSummaryRecord {
            id: String::new(),
            session_id: self.id.clone(),
            phase: 3,
            rows: Vec::new(),
            winner_plan_id: Some(plan_id.clone()),
            best_evaluation_id: Some(best.id.clone()),
            outer_iterations: 1,
            stopped_early,
        }))?;
        self.emit(
            EventKind::PhaseCompleted,
            json!({ "phase": 3, "episodes": evaluations.len(), "bestEvaluationId": best.id, "best": best.mean }),
        )?;
        self.report.phase_three(self.config.sweep_mode, &evaluations, &best, self.criterion(), stopped_early);
        Ok(PhaseThreeResult::Done(best))
    }
}

/// Highest `criterion`; the first of equals wins.
fn best_of<'a>(evaluations: impl IntoIterator<Item = &'a EvaluationRecord>, criterion: Metric) -> Option<&'a EvaluationRecord> {
    let mut best: Option<&EvaluationRecord> = None;
    for e in evaluations {
        if best.is_none_or(|b| e.score(criterion) > b.score(criterion)) {
            best = Some(e);
        }
    }
    best
}

/// Classifier with the highest mean `criterion` among `allowed`; enum order breaks ties.
fn select(
    rows: &BTreeMap<ClassifierAlgorithm, (PhaseRow, EvaluationRecord)>,
    allowed: &BTreeSet<ClassifierAlgorithm>,
    criterion: Metric,
) -> Option<ClassifierAlgorithm> {
    let mut best: Option<(ClassifierAlgorithm, f64)> = None;
    for (c, (row, _)) in rows {
        if !allowed.contains(c) {
            continue;
        }
        let score = row.mean.get(&criterion).copied().unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((*c, score));
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests;
