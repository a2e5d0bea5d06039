use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ingest::DatasetSchema;
use crate::planner::CompatibilityFacts;
use crate::types::{ClassifierAlgorithm, FeaturizerAlgorithm, PreprocessorAlgorithm};

/// A user instruction to a running session. Serialized externally tagged,
/// e.g. `{"removeClassifier":"sgd_classifier"}` or `"stopAll"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FeedbackCommand {
    AddClassifier(ClassifierAlgorithm),
    RemoveClassifier(ClassifierAlgorithm),
    AddPreprocessor(PreprocessorAlgorithm),
    RemovePreprocessor(PreprocessorAlgorithm),
    OverrideFeaturizer { column: String, featurizer: FeaturizerAlgorithm },
    CancelCurrentPipeline,
    StopPhase,
    StopAll,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeedbackError {
    #[error("search space would be empty")]
    EmptySearchSpace,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("featurizer {featurizer} cannot encode {column}")]
    IncompatibleFeaturizer { column: String, featurizer: FeaturizerAlgorithm },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session is no longer running")]
    SessionFinished,
    #[error("journal: {0}")]
    Store(String),
}

/// The candidate sets a session currently searches.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LiveSpace {
    pub classifiers: BTreeSet<ClassifierAlgorithm>,
    pub preprocessors: BTreeSet<PreprocessorAlgorithm>,
    /// Keyed by normalized column name.
    pub overrides: BTreeMap<String, FeaturizerAlgorithm>,
}

impl LiveSpace {
    /// Starting space of a request; override columns are kept as given.
    pub fn from_input(input: &crate::input::TrainingInput) -> Self {
        LiveSpace {
            classifiers: input.classifiers().into_iter().collect(),
            preprocessors: input.preprocessors().into_iter().collect(),
            overrides: input.featurizer_overrides(),
        }
    }

    /// Applies a configuration command; control commands leave the space alone.
    /// With no schema, column checks are deferred to the session.
    pub fn apply(
        &mut self,
        command: &FeedbackCommand,
        schema: Option<&DatasetSchema>,
        facts: &CompatibilityFacts,
    ) -> Result<(), FeedbackError> {
        match command {
            FeedbackCommand::AddClassifier(c) => {
                self.classifiers.insert(*c);
            }
            FeedbackCommand::RemoveClassifier(c) => {
                if self.classifiers.len() == 1 && self.classifiers.contains(c) {
                    return Err(FeedbackError::EmptySearchSpace);
                }
                self.classifiers.remove(c);
            }
            FeedbackCommand::AddPreprocessor(p) => {
                self.preprocessors.insert(*p);
            }
            FeedbackCommand::RemovePreprocessor(p) => {
                if self.preprocessors.len() == 1 && self.preprocessors.contains(p) {
                    return Err(FeedbackError::EmptySearchSpace);
                }
                self.preprocessors.remove(p);
            }
            FeedbackCommand::OverrideFeaturizer { column, featurizer } => {
                let name = match schema {
                    Some(schema) => {
                        let col = schema
                            .resolve(column)
                            .and_then(|n| schema.column(n))
                            .filter(|c| Some(&c.name) != schema.target_name.as_ref())
                            .ok_or_else(|| FeedbackError::UnknownColumn(column.clone()))?;
                        if !facts.is_compatible(col.feature_type, *featurizer) {
                            return Err(FeedbackError::IncompatibleFeaturizer {
                                column: col.name.clone(),
                                featurizer: *featurizer,
                            });
                        }
                        col.name.clone()
                    }
                    None => column.clone(),
                };
                self.overrides.insert(name, *featurizer);
            }
            FeedbackCommand::CancelCurrentPipeline | FeedbackCommand::StopPhase | FeedbackCommand::StopAll => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedFeedback {
    pub id: String,
    pub command: FeedbackCommand,
}

#[derive(Debug, Default)]
struct ControlState {
    projected: LiveSpace,
    schema: Option<DatasetSchema>,
    queue: VecDeque<QueuedFeedback>,
    finished: bool,
}

/// Thread-safe feedback queue shared between a session and its clients.
/// Commands are checked against the space as it will be once every queued
/// command has been applied.
#[derive(Debug, Default)]
pub struct SessionControl {
    state: Mutex<ControlState>,
    facts: CompatibilityFacts,
}

impl SessionControl {
    pub fn new(space: LiveSpace) -> Self {
        SessionControl {
            state: Mutex::new(ControlState { projected: space, ..ControlState::default() }),
            facts: CompatibilityFacts::default(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ControlState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Installs the session's starting space; commands queued earlier are
    /// replayed onto it.
    pub fn initialize(&self, space: LiveSpace, schema: DatasetSchema) {
        let mut st = self.lock();
        let mut projected = space;
        for q in &st.queue {
            let _ = projected.apply(&q.command, Some(&schema), &self.facts);
        }
        st.projected = projected;
        st.schema = Some(schema);
    }

    /// Rejects commands that cannot apply; `enqueue` runs under the lock so a
    /// caller can journal the command and obtain its id atomically.
    pub fn submit<E>(
        &self,
        command: FeedbackCommand,
        enqueue: impl FnOnce(&FeedbackCommand) -> Result<String, E>,
    ) -> Result<Result<String, E>, FeedbackError> {
        let mut st = self.lock();
        if st.finished {
            return Err(FeedbackError::SessionFinished);
        }
        let mut next = st.projected.clone();
        next.apply(&command, st.schema.as_ref(), &self.facts)?;
        match enqueue(&command) {
            Ok(id) => {
                st.projected = next;
                st.queue.push_back(QueuedFeedback { id: id.clone(), command });
                Ok(Ok(id))
            }
            Err(e) => Ok(Err(e)),
        }
    }

    pub fn drain(&self) -> Vec<QueuedFeedback> {
        self.lock().queue.drain(..).collect()
    }

    pub fn pending(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn finish(&self) {
        self.lock().finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.lock().finished
    }

    pub fn projected(&self) -> LiveSpace {
        self.lock().projected.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassifierAlgorithm as C;

    fn space() -> LiveSpace {
        LiveSpace {
            classifiers: [C::Logistic, C::Sgd].into_iter().collect(),
            preprocessors: [PreprocessorAlgorithm::Noop].into_iter().collect(),
            overrides: BTreeMap::new(),
        }
    }

    #[test]
    fn commands_serialize_externally_tagged() {
        let c: FeedbackCommand = serde_json::from_str(r#"{"removeClassifier":"sgd_classifier"}"#).unwrap();
        assert_eq!(c, FeedbackCommand::RemoveClassifier(C::Sgd));
        let s: FeedbackCommand = serde_json::from_str(r#""stopAll""#).unwrap();
        assert_eq!(s, FeedbackCommand::StopAll);
        let o: FeedbackCommand =
            serde_json::from_str(r#"{"overrideFeaturizer":{"column":"age","featurizer":"robust_scaler"}}"#).unwrap();
        assert!(matches!(o, FeedbackCommand::OverrideFeaturizer { .. }));
    }

    #[test]
    fn last_classifier_cannot_be_removed_even_when_queued() {
        let control = SessionControl::new(space());
        let ok = control.submit(FeedbackCommand::RemoveClassifier(C::Sgd), |_| Ok::<_, ()>("fb-1".into()));
        assert_eq!(ok, Ok(Ok("fb-1".into())));
        let err = control.submit(FeedbackCommand::RemoveClassifier(C::Logistic), |_| Ok::<_, ()>("fb-2".into()));
        assert_eq!(err, Err(FeedbackError::EmptySearchSpace));
        assert_eq!(err.unwrap_err().to_string(), "search space would be empty");
        assert_eq!(control.drain().len(), 1);
        control.finish();
        assert_eq!(
            control.submit(FeedbackCommand::StopAll, |_| Ok::<_, ()>("fb-3".into())),
            Err(FeedbackError::SessionFinished)
        );
    }
}
