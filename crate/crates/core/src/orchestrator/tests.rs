use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::*;
use crate::ingest::{Dataset, DatasetSchema};
use crate::input::{SweepMode, TrainingInput};
use crate::kgstore::{shared, KgStore};
use ClassifierAlgorithm as C;
use PreprocessorAlgorithm as P;

fn schema() -> DatasetSchema {
    let col = |v: &[&str]| v.iter().map(|s| Some(s.to_string())).collect::<Vec<_>>();
    Dataset::from_raw_columns(
        "toy",
        vec![
            ("a".into(), col(&["1.5", "2.5", "0.5", "3.5"])),
            ("b".into(), col(&["1", "2", "3", "4"])),
            ("y".into(), col(&["x", "y", "x", "y"])),
        ],
        Some("y"),
        &Default::default(),
    )
    .unwrap()
    .schema
}

fn config(classifiers: &[C], preprocessors: &[P]) -> SessionConfig {
    let mut input = TrainingInput::new("mock.csv", "y");
    input.candidate_models = Some(classifiers.to_vec());
    input.candidate_preprocessors = Some(preprocessors.to_vec());
    let mut c = SessionConfig::new(input);
    c.workers = 1;
    c.seed = 11;
    c
}

fn scored(table: &[((C, P), f64)]) -> Arc<dyn PipelineEvaluator> {
    let table: BTreeMap<(C, P), f64> = table.iter().copied().collect();
    Arc::new(MockEvaluator::uniform(schema(), move |i| table.get(&(i.classifier, i.preprocessor)).copied().unwrap_or(0.5)))
}

fn session(config: SessionConfig, evaluator: Arc<dyn PipelineEvaluator>) -> (Session, SharedStore) {
    let store = shared(KgStore::in_memory());
    let s = Session::create(config, evaluator, SessionSetup::new(store.clone())).unwrap();
    (s, store)
}

#[test]
fn profiling_converges_to_brute_force_winner() {
    let table = [((C::Logistic, P::Noop), 0.9), ((C::GaussianNb, P::Noop), 0.7)];
    let (mut s, _) = session(config(&[C::Logistic, C::GaussianNb], &[P::Noop]), scored(&table));
    let result = s.profile_pipelines([C::Logistic, C::GaussianNb], [P::Noop]).unwrap();
    let brute = table.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0 .0;
    assert_eq!(result.plan().unwrap().plan.classifier(), brute);
    assert_eq!(result.evaluation_count(), result.runs.len() * 10);
}

#[test]
fn single_candidate_takes_two_outer_iterations() {
    let (mut s, _) = session(config(&[C::Logistic], &[P::Noop]), scored(&[]));
    let result = s.profile_pipelines([C::Logistic], [P::Noop]).unwrap();
    assert_eq!(result.iterations, 2);
    assert_eq!(result.runs.len(), 1);
}

#[test]
fn equal_scores_pick_the_first_classifier_in_enum_order() {
    let picks: Vec<C> = (0..3)
        .map(|_| {
            let (mut s, _) = session(config(&[C::Sgd, C::Logistic, C::GaussianNb], &[P::Noop]), scored(&[]));
            s.profile_pipelines([C::Sgd, C::Logistic, C::GaussianNb], [P::Noop]).unwrap().plan().unwrap().plan.classifier()
        })
        .collect();
    assert!(picks.iter().all(|c| *c == C::GaussianNb), "{picks:?}");
}

#[test]
fn full_session_accounts_for_every_episode() {
    let table = [((C::Logistic, P::Noop), 0.9), ((C::GaussianNb, P::Noop), 0.7), ((C::Logistic, P::Pca), 0.95)];
    let (s, store) = session(config(&[C::Logistic, C::GaussianNb], &[P::Noop, P::Pca]), scored(&table));
    let sid = s.id().to_string();
    let outcome = s.run().unwrap();
    assert_eq!(outcome.status, SessionStatus::Completed);
    assert_eq!(outcome.model.algorithm, C::Logistic);
    assert_eq!(outcome.model.preprocessor, P::Pca);
    let guard = store.read().unwrap();
    let count = |phase| guard.query_evaluations(&sid, &kgstore::EvaluationFilter { phase: Some(phase), ..Default::default() }).unwrap().len();
    assert_eq!(count(1), 2 * 10);
    let phase2_runs = guard.plans(&sid).unwrap().iter().filter(|p| p.phase == 2).count();
    assert_eq!(count(2), phase2_runs * 10);
    assert_eq!(count(3), 20);
    let events = guard.events(&sid, None).unwrap();
    assert!(events.windows(2).all(|w| w[1].sequence == w[0].sequence + 1));
    assert_eq!(events.last().unwrap().event, "sessionCompleted");
    assert_eq!(outcome.report.phase1.as_ref().unwrap().selected.as_deref(), Some("logistic_classifier"));
}

#[test]
fn events_are_persisted_before_listeners_see_them() {
    let store = shared(KgStore::in_memory());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let mut setup = SessionSetup::new(store.clone());
    let (st, log) = (store.clone(), seen.clone());
    setup.listener = Some(Arc::new(move |e: &PhaseEvent| {
        let persisted = st.read().unwrap().events(&e.session_id, None).unwrap().iter().any(|r| r.sequence == e.sequence);
        log.lock().unwrap().push(persisted);
    }));
    let mut c = config(&[C::Logistic], &[P::Noop]);
    c.input.model_profiling_episode = 2;
    c.input.model_search_episode = 2;
    Session::create(c, scored(&[]), setup).unwrap().run().unwrap();
    let seen = seen.lock().unwrap();
    assert!(!seen.is_empty() && seen.iter().all(|p| *p));
}

#[test]
fn f1_criterion_overrides_accuracy() {
    let evaluator = Arc::new(MockEvaluator::new(schema(), |i: &PipelineInstance| {
        let (acc, f1) = match i.classifier {
            C::Logistic => (0.9, 0.6),
            _ => (0.8, 0.75),
        };
        Ok([(Metric::Accuracy, acc), (Metric::F1, f1), (Metric::Precision, f1), (Metric::Recall, f1)].into_iter().collect())
    }));
    let mut c = config(&[C::Logistic, C::GaussianNb], &[P::Noop]);
    c.input.selection_criteria = Metric::F1;
    c.input.model_search_episode = 1;
    let (s, _) = session(c, evaluator);
    let outcome = s.run().unwrap();
    assert_eq!(outcome.model.algorithm, C::GaussianNb);
}

#[test]
fn grid_sweep_is_bounded_by_the_grid() {
    let mut c = config(&[C::GaussianNb], &[P::Pca]);
    c.sweep_mode = SweepMode::Grid;
    let (s, store) = session(c, scored(&[]));
    let sid = s.id().to_string();
    s.run().unwrap();
    let phase3 = store.read().unwrap().query_evaluations(&sid, &kgstore::EvaluationFilter { phase: Some(3), ..Default::default() }).unwrap().len();
    assert_eq!(phase3, 9);
}

#[test]
fn sweep_best_so_far_is_monotone() {
    let evaluator = Arc::new(MockEvaluator::uniform(schema(), |i| {
        0.5 + 0.4 * (seed::mix(i.seed) % 1000) as f64 / 1000.0
    }));
    let (s, _) = session(config(&[C::Logistic], &[P::Noop]), evaluator);
    let report = s.run().unwrap().report;
    let sweep = report.phase3.unwrap();
    assert_eq!(sweep.episodes.len(), 20);
    assert!(sweep.episodes.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
    let top = sweep.episodes.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.final_model.cross_validation[&Metric::Accuracy], top);
}

fn value_trace(store: &SharedStore, sid: &str) -> Vec<(String, String, f64, f64, f64)> {
    store
        .read()
        .unwrap()
        .value_updates(sid)
        .unwrap()
        .iter()
        .map(|v| (v.state.clone(), v.action.clone(), v.reward, v.r_after, v.rho_after))
        .collect()
}

#[test]
fn worker_count_does_not_change_learning() {
    let evaluator = || {
        Arc::new(MockEvaluator::uniform(schema(), |i| 0.6 + 0.3 * (seed::mix(i.seed) % 100) as f64 / 100.0))
            as Arc<dyn PipelineEvaluator>
    };
    let run = |workers| {
        let mut c = config(&[C::Logistic, C::Sgd], &[P::Noop, P::StdScaler]);
        c.workers = workers;
        let (s, store) = session(c, evaluator());
        let sid = s.id().to_string();
        let report = s.run().unwrap().report;
        (value_trace(&store, &sid), report)
    };
    let (a, ra) = run(1);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn journaled_updates_reproduce_plan_quality() {
    let (mut s, store) = session(config(&[C::Logistic, C::Sgd], &[P::Noop]), scored(&[((C::Sgd, P::Noop), 0.8)]));
    let sid = s.id().to_string();
    let result = s.profile_pipelines([C::Logistic, C::Sgd], [P::Noop]).unwrap();
    let mut last: BTreeMap<(String, String), f64> = BTreeMap::new();
    for v in store.read().unwrap().value_updates(&sid).unwrap() {
        last.insert((v.state.clone(), v.action.clone()), v.rho_after);
    }
    for run in &result.runs {
        let from_journal: f64 = run
            .plan
            .transitions()
            .iter()
            .filter(|t| t.step.contributes())
            .map(|t| last.get(&(t.state_key(), t.action_key())).copied().unwrap_or(0.0))
            .sum();
        assert!((from_journal - plan_quality(&run.plan, &result.values)).abs() < 1e-9);
    }
}

#[test]
fn removing_the_phase_two_classifier_restarts_with_the_runner_up() {
    let table = [((C::Logistic, P::Noop), 0.9), ((C::Sgd, P::Noop), 0.8), ((C::GaussianNb, P::Noop), 0.6)];
    let store = shared(KgStore::in_memory());
    let mut setup = SessionSetup::new(store.clone());
    let control = setup.control.clone();
    let (st, sent) = (store.clone(), Arc::new(Mutex::new(false)));
    setup.listener = Some(Arc::new(move |e: &PhaseEvent| {
        let mut sent = sent.lock().unwrap();
        if e.phase == 2 && e.kind == EventKind::PlanGenerated && !*sent {
            *sent = true;
            submit_feedback(&st, &control, &e.session_id, FeedbackCommand::RemoveClassifier(C::Logistic), None).unwrap();
        }
    }));
    let mut c = config(&[C::Logistic, C::Sgd, C::GaussianNb], &[P::Noop, P::StdScaler]);
    c.input.model_profiling_episode = 3;
    let s = Session::create(c, scored(&table), setup).unwrap();
    let sid = s.id().to_string();
    let outcome = s.run().unwrap();
    assert_eq!(outcome.model.algorithm, C::Sgd);
    let guard = store.read().unwrap();
    let events = guard.events(&sid, None).unwrap();
    let applied = events.iter().find(|e| e.event == "feedbackApplied").unwrap();
    let after: Vec<u64> = guard
        .query_evaluations(&sid, &Default::default())
        .unwrap()
        .iter()
        .filter(|e| e.classifier == C::Logistic)
        .map(|e| e.episode)
        .collect();
    let applied_episode = events
        .iter()
        .filter(|e| e.sequence < applied.sequence && e.event == "episodeCompleted")
        .filter_map(|e| e.payload["episode"].as_u64())
        .max()
        .unwrap();
    assert!(after.iter().all(|ep| *ep <= applied_episode));
    let next_plan = events.iter().find(|e| e.sequence > applied.sequence && e.event == "planGenerated").unwrap();
    assert!(next_plan.sequence > applied.sequence);
    assert_eq!(next_plan.payload["classifier"], "sgd_classifier");
}

#[test]
fn stop_all_after_phase_one_trains_the_phase_one_best() {
    let table = [((C::Logistic, P::Noop), 0.7), ((C::Sgd, P::Noop), 0.8)];
    let store = shared(KgStore::in_memory());
    let mut setup = SessionSetup::new(store.clone());
    let control = setup.control.clone();
    let st = store.clone();
    setup.listener = Some(Arc::new(move |e: &PhaseEvent| {
        if e.kind == EventKind::PhaseCompleted && e.phase == 1 {
            submit_feedback(&st, &control, &e.session_id, FeedbackCommand::StopAll, None).unwrap();
        }
    }));
    let s = Session::create(config(&[C::Logistic, C::Sgd], &[P::Noop, P::Pca]), scored(&table), setup).unwrap();
    let sid = s.id().to_string();
    let outcome = s.run().unwrap();
    assert_eq!(outcome.status, SessionStatus::Stopped);
    assert_eq!(outcome.model.algorithm, C::Sgd);
    let guard = store.read().unwrap();
    assert!(guard.query_evaluations(&sid, &Default::default()).unwrap().iter().all(|e| e.phase == 1));
    let last = guard.events(&sid, None).unwrap().last().map(|e| PhaseEvent::from_record(e).unwrap());
    assert_eq!(JobState::from_last_event(last.as_ref()), JobState::Stopped);
}

#[test]
fn last_classifier_removal_is_rejected() {
    let (s, store) = session(config(&[C::Logistic], &[P::Noop]), scored(&[]));
    let control = SessionControl::new(LiveSpace::from_input(&config(&[C::Logistic], &[P::Noop]).input));
    let err = submit_feedback(&store, &control, s.id(), FeedbackCommand::RemoveClassifier(C::Logistic), None).unwrap_err();
    assert_eq!(err.to_string(), "search space would be empty");
}

#[test]
fn override_regrounds_the_next_domain() {
    let store = shared(KgStore::in_memory());
    let mut setup = SessionSetup::new(store.clone());
    let control = setup.control.clone();
    let st = store.clone();
    setup.listener = Some(Arc::new(move |e: &PhaseEvent| {
        if e.kind == EventKind::PhaseCompleted && e.phase == 1 {
            let cmd = FeedbackCommand::OverrideFeaturizer { column: "a".into(), featurizer: FeaturizerAlgorithm::RobustScaler };
            submit_feedback(&st, &control, &e.session_id, cmd, None).unwrap();
        }
    }));
    let s = Session::create(config(&[C::Logistic], &[P::Noop]), scored(&[]), setup).unwrap();
    let sid = s.id().to_string();
    s.run().unwrap();
    let guard = store.read().unwrap();
    let phase2 = guard.plans(&sid).unwrap().into_iter().find(|p| p.phase == 2).unwrap();
    assert!(phase2.plan.featurizers().contains(&("field_a".to_string(), FeaturizerAlgorithm::RobustScaler)));
    let phase1 = guard.plans(&sid).unwrap().into_iter().find(|p| p.phase == 1).unwrap();
    assert!(!phase1.plan.featurizers().contains(&("field_a".to_string(), FeaturizerAlgorithm::RobustScaler)));
}

#[test]
fn minimum_accuracy_stops_phases_early() {
    let mut c = config(&[C::Logistic, C::Sgd], &[P::Noop]);
    c.input.minimum_accuracy = Some(0.5);
    let (s, store) = session(c, scored(&[]));
    let sid = s.id().to_string();
    s.run().unwrap();
    let n = store.read().unwrap().query_evaluations(&sid, &Default::default()).unwrap().len();
    assert_eq!(n, 3);
}

#[test]
fn failing_pipelines_surface_as_session_error() {
    let evaluator = Arc::new(MockEvaluator::new(schema(), |i: &PipelineInstance| {
        Err(EvalError::Incompatible(format!("{} cannot fit", i.classifier)))
    }));
    let mut c = config(&[C::Logistic], &[P::Noop]);
    c.input.model_profiling_episode = 2;
    let (s, store) = session(c, evaluator);
    let sid = s.id().to_string();
    let err = s.run().unwrap_err();
    assert!(err.to_string().contains("logistic_classifier cannot fit"), "{err}");
    let guard = store.read().unwrap();
    assert_eq!(guard.events(&sid, None).unwrap().last().unwrap().event, "error");
}

#[test]
fn real_evaluator_trains_a_reloadable_artifact() {
    let n = 60;
    let a: Vec<Option<String>> = (0..n).map(|i| Some(format!("{}", if i % 2 == 0 { -2.0 } else { 2.0 } + (i % 7) as f64 * 0.1))).collect();
    let b: Vec<Option<String>> = (0..n).map(|i| Some(format!("{}", (i * 13 % 17) as f64))).collect();
    let y: Vec<Option<String>> = (0..n).map(|i| Some(if i % 2 == 0 { "neg" } else { "pos" }.to_string())).collect();
    let dataset = Dataset::from_raw_columns("blob", vec![("a".into(), a), ("b".into(), b), ("y".into(), y)], Some("y"), &Default::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut setup = SessionSetup::new(shared(KgStore::in_memory()));
    setup.artifact_dir = Some(dir.path().to_path_buf());
    let mut c = config(&[C::Logistic, C::GaussianNb], &[P::Noop, P::StdScaler]);
    c.input.folds = 3;
    c.input.model_profiling_episode = 2;
    c.input.model_search_episode = 2;
    let outcome = Session::create(c, Arc::new(DatasetEvaluator::new(dataset)), setup).unwrap().run().unwrap();
    assert!(outcome.model.saved);
    assert!(outcome.model.accuracy > 0.9);
    let artifact = crate::evaluator::ModelArtifact::load(outcome.model.artifact_path.unwrap()).unwrap();
    let labels = crate::evaluator::predict(&artifact, &[serde_json::json!({"a": 2.1, "b": 3})]).unwrap();
    assert_eq!(labels[0].value, "pos");
}

use crate::types::FeaturizerAlgorithm;
use crate::kgstore;
