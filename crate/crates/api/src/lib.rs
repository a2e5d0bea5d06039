//! HTTP+JSON surface over the pipeline-search core.
//!
//! Routes mirror the query/mutation names of the knowledge schema:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/mutation/trainClassifier` | start a job, `202` with a [`JobHandle`] |
//! | POST | `/mutation/feedback` | steer a live job |
//! | POST | `/query/classifyInstances` | labels from a saved model |
//! | GET | `/subscription/events/{jobId}` | SSE replay then live tail |
//! | GET | `/query/jobs`, `/query/job/{jobId}` | job states |
//! | GET | `/query/await/{jobId}?timeoutMs=` | block until terminal or timeout |
//! | GET | `/query/model/{jobId}` | the job's trained model |
//! | GET | `/query/bestModel/{jobId}?criterion=` | best evaluation as a model |
//! | GET | `/query/evaluations/{jobId}?phase=&classifier=&preprocessor=` | evaluation records |
//!
//! Mutations honour an `Idempotency-Key` header. All state lives in the
//! journal; a restarted service rebuilds job states from it.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use pipeplan_core::evaluator::{predict, EvalError, ModelArtifact};
use pipeplan_core::input::{FieldError, SessionConfig, SweepMode, TrainingInput};
use pipeplan_core::kgstore::{shared, EvaluationFilter, EvaluationRecord, KgStore, SharedStore, StoreError};
use pipeplan_core::orchestrator::{
    create_session, fail_session, run_training, submit_feedback, FeedbackCommand, FeedbackError, JobState, LiveSpace,
    PhaseEvent, SessionControl, SessionSetup,
};
use pipeplan_core::{ClassifierAlgorithm, Metric, PreprocessorAlgorithm};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

pub const JOURNAL_FILE: &str = "journal.ndjson";
pub const RESTART_REASON: &str = "service restarted before the job finished";

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub journal_dir: PathBuf,
    /// Evaluation workers per job; `0` means available parallelism.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobHandle {
    pub job_id: String,
    pub session_id: String,
    pub state: JobState,
}

struct LiveJob {
    control: Arc<SessionControl>,
    sequence: watch::Receiver<u64>,
}

pub struct AppState {
    store: SharedStore,
    config: ApiConfig,
    live: Mutex<HashMap<String, LiveJob>>,
    /// Serializes idempotency lookups with the writes they guard.
    mutations: Mutex<()>,
}

pub type App = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    Invalid(Vec<FieldError>),
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Invalid(fields) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": "validation failed", "fields": fields }))
            }
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSession(_) | StoreError::NotFound(_) => ApiError::NotFound(e.to_string()),
            StoreError::NoEvaluations => ApiError::Conflict(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    /// Opens (or creates) the journal and marks jobs that were live when a
    /// previous process stopped as failed.
    pub fn open(config: ApiConfig) -> Result<App, StoreError> {
        std::fs::create_dir_all(&config.journal_dir)
            .map_err(|e| StoreError::Io(format!("{}: {e}", config.journal_dir.display())))?;
        let store = shared(KgStore::open(config.journal_dir.join(JOURNAL_FILE))?);
        let orphaned: Vec<String> = {
            let guard = store.read().unwrap_or_else(|p| p.into_inner());
            guard
                .sessions()
                .filter(|s| !state_of(&guard, &s.id).is_terminal())
                .map(|s| s.id.clone())
                .collect()
        };
        let setup = SessionSetup::new(store.clone());
        for id in orphaned {
            fail_session(&setup, &id, RESTART_REASON)?;
        }
        Ok(Arc::new(AppState { store, config, live: Mutex::new(HashMap::new()), mutations: Mutex::new(()) }))
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, KgStore> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn session_of(&self, job_id: &str) -> ApiResult<String> {
        self.read()
            .sessions()
            .find(|s| s.job_id == job_id)
            .map(|s| s.id.clone())
            .ok_or_else(|| ApiError::NotFound(format!("unknown job `{job_id}`")))
    }

    pub fn handle(&self, job_id: &str) -> ApiResult<JobHandle> {
        let session_id = self.session_of(job_id)?;
        let state = state_of(&self.read(), &session_id);
        Ok(JobHandle { job_id: job_id.to_string(), session_id, state })
    }

    fn watcher(&self, session_id: &str) -> Option<watch::Receiver<u64>> {
        self.live.lock().unwrap_or_else(|p| p.into_inner()).get(session_id).map(|j| j.sequence.clone())
    }
}

fn state_of(store: &KgStore, session_id: &str) -> JobState {
    let last = store.events(session_id, None).ok().and_then(|e| e.last().and_then(|r| PhaseEvent::from_record(r)));
    JobState::from_last_event(last.as_ref())
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/mutation/trainClassifier", post(train_classifier))
        .route("/mutation/feedback", post(feedback))
        .route("/query/classifyInstances", post(classify_instances))
        .route("/subscription/events/{job_id}", get(events))
        .route("/query/jobs", get(jobs))
        .route("/query/job/{job_id}", get(job))
        .route("/query/await/{job_id}", get(await_job))
        .route("/query/model/{job_id}", get(final_model))
        .route("/query/bestModel/{job_id}", get(best_model))
        .route("/query/evaluations/{job_id}", get(evaluations))
        .with_state(app)
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(vec![FieldError { field: "body".into(), message: e.to_string() }]))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct TrainRequest {
    input: TrainingInput,
    seed: Option<u64>,
    sweep_mode: Option<SweepMode>,
    max_outer_iterations: Option<usize>,
}

async fn train_classifier(State(app): State<App>, headers: HeaderMap, body: axum::body::Bytes) -> ApiResult<Response> {
    let request: TrainRequest = parse_body(&body)?;
    let key = idempotency_key(&headers);
    let _guard = app.mutations.lock().unwrap_or_else(|p| p.into_inner());
    if let Some(k) = &key {
        let existing = app.read().sessions().find(|s| s.idempotency_key.as_deref() == Some(k)).map(|s| s.job_id.clone());
        if let Some(job_id) = existing {
            return Ok((StatusCode::OK, Json(app.handle(&job_id)?)).into_response());
        }
    }
    let mut config = SessionConfig::new(request.input);
    config.workers = app.config.workers;
    config.seed = request.seed.unwrap_or(config.seed);
    config.sweep_mode = request.sweep_mode.unwrap_or(config.sweep_mode);
    config.max_outer_iterations = request.max_outer_iterations.unwrap_or(config.max_outer_iterations);
    config.validate().map_err(ApiError::Invalid)?;

    let session_id = create_session(&app.store, &config, key)?;
    let job_id = app.read().session(&session_id)?.job_id.clone();
    let control = Arc::new(SessionControl::new(LiveSpace::from_input(&config.input)));
    let (tx, rx) = watch::channel(0u64);
    app.live
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(session_id.clone(), LiveJob { control: control.clone(), sequence: rx });

    let mut setup = SessionSetup::new(app.store.clone());
    setup.control = control;
    setup.artifact_dir = Some(app.config.journal_dir.join("artifacts").join(&session_id));
    setup.listener = Some(Arc::new(move |e: &PhaseEvent| {
        tx.send_replace(e.sequence);
    }));
    let runner = app.clone();
    let sid = session_id.clone();
    tokio::task::spawn_blocking(move || {
        match run_training(setup, &sid) {
            Ok(o) => tracing::info!(session = %sid, model = %o.model.id, "job finished"),
            Err(e) => tracing::warn!(session = %sid, error = %e, "job failed"),
        }
        runner.live.lock().unwrap_or_else(|p| p.into_inner()).remove(&sid);
    });
    let handle = JobHandle { job_id, session_id, state: JobState::Pending };
    Ok((StatusCode::ACCEPTED, Json(handle)).into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct FeedbackRequest {
    job_id: String,
    command: FeedbackCommand,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedbackAck {
    pub feedback_id: String,
    pub job_id: String,
    pub queued: bool,
}

async fn feedback(State(app): State<App>, headers: HeaderMap, body: axum::body::Bytes) -> ApiResult<Response> {
    let request: FeedbackRequest = parse_body(&body)?;
    let key = idempotency_key(&headers);
    let session_id = app.session_of(&request.job_id)?;
    let _guard = app.mutations.lock().unwrap_or_else(|p| p.into_inner());
    if let Some(k) = &key {
        let existing = app
            .read()
            .feedback(&session_id)?
            .iter()
            .find(|f| f.idempotency_key.as_deref() == Some(k))
            .map(|f| f.id.clone());
        if let Some(feedback_id) = existing {
            return Ok((StatusCode::OK, Json(FeedbackAck { feedback_id, job_id: request.job_id, queued: true })).into_response());
        }
    }
    let control = app
        .live
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .get(&session_id)
        .map(|j| j.control.clone())
        .ok_or_else(|| ApiError::Conflict(FeedbackError::SessionFinished.to_string()))?;
    let feedback_id = submit_feedback(&app.store, &control, &session_id, request.command, key).map_err(|e| match e {
        FeedbackError::UnknownSession(_) => ApiError::NotFound(e.to_string()),
        FeedbackError::EmptySearchSpace | FeedbackError::SessionFinished => ApiError::Conflict(e.to_string()),
        FeedbackError::UnknownColumn(_) | FeedbackError::IncompatibleFeaturizer { .. } => {
            ApiError::Unprocessable(e.to_string())
        }
        FeedbackError::Store(m) => ApiError::Internal(m),
    })?;
    Ok((StatusCode::ACCEPTED, Json(FeedbackAck { feedback_id, job_id: request.job_id, queued: true })).into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    #[serde(rename = "modelID", alias = "modelId")]
    model_id: String,
    data: Vec<Value>,
}

async fn classify_instances(State(app): State<App>, body: axum::body::Bytes) -> ApiResult<Response> {
    let request: ClassifyRequest = parse_body(&body)?;
    let path = {
        let guard = app.read();
        let model = guard.model(&request.model_id)?;
        match (&model.artifact_path, model.saved) {
            (Some(p), true) => p.clone(),
            _ => return Err(ApiError::Conflict(format!("model `{}` has no saved artifact", request.model_id))),
        }
    };
    let labels = tokio::task::spawn_blocking(move || {
        let artifact = ModelArtifact::load(&path)?;
        predict(&artifact, &request.data)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| match e {
        EvalError::SchemaMismatch(_) => ApiError::Unprocessable(e.to_string()),
        other => ApiError::Internal(other.to_string()),
    })?;
    Ok(Json(labels).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

struct Tail {
    app: App,
    session_id: String,
    last: u64,
    pending: std::collections::VecDeque<PhaseEvent>,
    watcher: Option<watch::Receiver<u64>>,
    done: bool,
}

impl Tail {
    fn refill(&mut self) {
        let guard = self.app.read();
        if let Ok(records) = guard.events(&self.session_id, Some(self.last)) {
            self.pending.extend(records.into_iter().filter_map(PhaseEvent::from_record));
        }
    }

    async fn next(mut self) -> Option<(Result<Event, Infallible>, Tail)> {
        loop {
            if let Some(e) = self.pending.pop_front() {
                self.last = e.sequence;
                self.done = e.kind.is_terminal();
                let event = Event::default()
                    .id(e.sequence.to_string())
                    .event(e.kind.as_str())
                    .json_data(&e)
                    .expect("event serializes");
                return Some((Ok(event), self));
            }
            if self.done {
                return None;
            }
            self.refill();
            if !self.pending.is_empty() {
                continue;
            }
            if self.watcher.is_none() && !self.app.live.lock().unwrap_or_else(|p| p.into_inner()).contains_key(&self.session_id) {
                // Finished between reads: pick up the tail once more, then stop.
                self.refill();
                if self.pending.is_empty() {
                    return None;
                }
                continue;
            }
            match &mut self.watcher {
                Some(rx) => {
                    if tokio::time::timeout(Duration::from_millis(500), rx.changed()).await.is_ok_and(|r| r.is_err()) {
                        self.watcher = None;
                    }
                }
                None => tokio::time::sleep(Duration::from_millis(100)).await,
            }
        }
    }
}

async fn events(
    State(app): State<App>,
    Path(job_id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let session_id = app.session_of(&job_id)?;
    let resume = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok());
    let watcher = app.watcher(&session_id);
    let mut tail = Tail {
        app,
        session_id,
        last: query.after.or(resume).unwrap_or(0),
        pending: Default::default(),
        watcher,
        done: false,
    };
    tail.refill();
    let stream = futures::stream::unfold(tail, Tail::next);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn jobs(State(app): State<App>) -> ApiResult<Json<Vec<JobHandle>>> {
    let guard = app.read();
    Ok(Json(
        guard
            .sessions()
            .map(|s| JobHandle { job_id: s.job_id.clone(), session_id: s.id.clone(), state: state_of(&guard, &s.id) })
            .collect(),
    ))
}

async fn job(State(app): State<App>, Path(job_id): Path<String>) -> ApiResult<Json<JobHandle>> {
    app.handle(&job_id).map(Json)
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AwaitQuery {
    timeout_ms: Option<u64>,
}

async fn await_job(
    State(app): State<App>,
    Path(job_id): Path<String>,
    Query(query): Query<AwaitQuery>,
) -> ApiResult<Json<JobHandle>> {
    let deadline = tokio::time::Instant::now() + Duration::from_millis(query.timeout_ms.unwrap_or(30_000));
    loop {
        let handle = app.handle(&job_id)?;
        if handle.state.is_terminal() || tokio::time::Instant::now() >= deadline {
            return Ok(Json(handle));
        }
        match app.watcher(&handle.session_id) {
            Some(mut rx) => {
                let _ = tokio::time::timeout_at(deadline.min(tokio::time::Instant::now() + Duration::from_millis(500)), rx.changed()).await;
            }
            None => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
}

async fn final_model(State(app): State<App>, Path(job_id): Path<String>) -> ApiResult<Response> {
    let session_id = app.session_of(&job_id)?;
    let guard = app.read();
    let model = guard.models(&session_id)?.last().map(|m| (*m).clone());
    model
        .map(|m| Json(m).into_response())
        .ok_or_else(|| ApiError::NotFound(format!("job `{job_id}` has no trained model yet")))
}

#[derive(Debug, Default, Deserialize)]
struct CriterionQuery {
    criterion: Option<Metric>,
}

async fn best_model(
    State(app): State<App>,
    Path(job_id): Path<String>,
    Query(query): Query<CriterionQuery>,
) -> ApiResult<Response> {
    let session_id = app.session_of(&job_id)?;
    let guard = app.read();
    let criterion = match query.criterion {
        Some(c) => c,
        None => guard.session(&session_id)?.config.input.selection_criteria,
    };
    Ok(Json(guard.query_best_model(&session_id, criterion)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct EvaluationQuery {
    phase: Option<u8>,
    classifier: Option<ClassifierAlgorithm>,
    preprocessor: Option<PreprocessorAlgorithm>,
}

async fn evaluations(
    State(app): State<App>,
    Path(job_id): Path<String>,
    Query(q): Query<EvaluationQuery>,
) -> ApiResult<Response> {
    let session_id = app.session_of(&job_id)?;
    let guard = app.read();
    let filter = EvaluationFilter { phase: q.phase, classifier: q.classifier, preprocessor: q.preprocessor };
    let body: Vec<EvaluationRecord> =
        guard.query_evaluations(&session_id, &filter)?.into_iter().cloned().collect();
    Ok(Json(body).into_response())
}
