//! Run summaries. Nothing here depends on wall-clock time, so identical runs
//! serialize identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SessionStatus;
use crate::evaluator::ParamSet;
use crate::input::{SessionConfig, SweepMode};
use crate::kgstore::{EvaluationRecord, MachineLearningModel, PhaseRow};
use crate::planner::Plan;
use crate::types::{ClassifierAlgorithm, FeaturizerAlgorithm, Metric, PreprocessorAlgorithm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseReport {
    pub rows: Vec<PhaseRow>,
    pub selected: Option<String>,
    pub outer_iterations: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepEpisode {
    pub episode: u64,
    pub classifier_params: ParamSet,
    pub preprocessor_params: ParamSet,
    pub score: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepReport {
    pub mode: SweepMode,
    pub episodes: Vec<SweepEpisode>,
    pub best_evaluation_id: String,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FinalModel {
    pub model_id: String,
    pub evaluation_id: Option<String>,
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub featurizers: BTreeMap<String, FeaturizerAlgorithm>,
    pub hyperparameters: ParamSet,
    pub preprocessor_parameters: ParamSet,
    pub cross_validation: BTreeMap<Metric, f64>,
    pub labels: Vec<String>,
    /// Artifact file name, relative to the output directory.
    pub artifact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub session_id: String,
    pub dataset: String,
    pub target: String,
    pub status: SessionStatus,
    pub selection_criteria: Metric,
    pub folds: usize,
    pub profiling_episodes: usize,
    pub search_episodes: usize,
    pub seed: u64,
    pub phase1: Option<PhaseReport>,
    pub phase2: Option<PhaseReport>,
    pub phase3: Option<SweepReport>,
    pub final_model: FinalModel,
    pub evaluations: usize,
    pub failures: usize,
    pub feedback_applied: usize,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let criterion = self.selection_criteria;
        let _ = writeln!(out, "# Pipeline search report\n");
        let _ = writeln!(out, "- session: `{}`", self.session_id);
        let _ = writeln!(out, "- dataset: `{}` (target `{}`)", self.dataset, self.target);
        let _ = writeln!(out, "- status: {}", serde_json::to_value(self.status).unwrap().as_str().unwrap_or(""));
        let _ = writeln!(
            out,
            "- selection: {criterion}, {} folds, {} profiling and {} search episodes, seed {}",
            self.folds, self.profiling_episodes, self.search_episodes, self.seed
        );
        let _ = writeln!(out, "- evaluations: {} ({} failed)\n", self.evaluations, self.failures);
        for (title, phase) in [("Phase 1: model selection", &self.phase1), ("Phase 2: pipeline learning", &self.phase2)] {
            let Some(p) = phase else { continue };
            let _ = writeln!(out, "## {title}\n");
            let _ = writeln!(out, "| classifier | preprocessor | episodes | accuracy | f1 | precision | recall | best {criterion} |");
            let _ = writeln!(out, "|---|---|---:|---:|---:|---:|---:|---:|");
            for r in &p.rows {
                let m = |k: Metric| r.mean.get(&k).copied().unwrap_or(0.0);
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    r.classifier,
                    r.preprocessor,
                    r.episodes,
                    m(Metric::Accuracy),
                    m(Metric::F1),
                    m(Metric::Precision),
                    m(Metric::Recall),
                    r.best
                );
            }
            let _ = writeln!(
                out,
                "\nSelected: {}{}\n",
                p.selected.as_deref().unwrap_or("none"),
                if p.stopped_early { " (stopped early)" } else { "" }
            );
        }
        if let Some(s) = &self.phase3 {
            let _ = writeln!(out, "## Phase 3: hyper-parameter search ({:?})\n", s.mode);
            let _ = writeln!(out, "| episode | {criterion} | best so far | classifier parameters |");
            let _ = writeln!(out, "|---:|---:|---:|---|");
            for e in &s.episodes {
                let params = serde_json::to_string(&e.classifier_params).unwrap_or_default();
                let _ = writeln!(out, "| {} | {:.4} | {:.4} | `{}` |", e.episode, e.score, e.best_so_far, params);
            }
            let _ = writeln!(out);
        }
        let f = &self.final_model;
        let _ = writeln!(out, "## Final model\n");
        let _ = writeln!(out, "- id: `{}`", f.model_id);
        let _ = writeln!(out, "- hyper-parameters: `{}`", serde_json::to_string(&f.hyperparameters).unwrap_or_default());
        for (m, v) in &f.cross_validation {
            let _ = writeln!(out, "- mean CV {m}: {v:.4}");
        }
        if let Some(a) = &f.artifact {
            let _ = writeln!(out, "- artifact: `{a}`");
        }
        let accuracy = f.cross_validation.get(&Metric::Accuracy).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "\nFinal model: {} ({}), mean CV accuracy {:.4}",
            f.classifier, f.preprocessor, accuracy
        );
        out
    }
}

/// Accumulates phase summaries while a session runs.
#[derive(Debug, Clone)]
pub(crate) struct Builder {
    session_id: String,
    config: SessionConfig,
    phase1: Option<PhaseReport>,
    phase2: Option<PhaseReport>,
    phase3: Option<SweepReport>,
    pub feedback_applied: usize,
}

impl Builder {
    pub fn new(session_id: &str, config: &SessionConfig) -> Self {
        Builder {
            session_id: session_id.to_string(),
            config: config.clone(),
            phase1: None,
            phase2: None,
            phase3: None,
            feedback_applied: 0,
        }
    }

    pub fn phase_one(&mut self, rows: &[PhaseRow], selected: Option<ClassifierAlgorithm>, iterations: usize, stopped: bool) {
        self.phase1 = Some(PhaseReport {
            rows: rows.to_vec(),
            selected: selected.map(|c| c.to_string()),
            outer_iterations: iterations,
            stopped_early: stopped,
        });
    }

    pub fn phase_two(&mut self, rows: &[PhaseRow], plan: &Plan, iterations: usize, stopped: bool) {
        self.phase2 = Some(PhaseReport {
            rows: rows.to_vec(),
            selected: Some(format!("{} + {}", plan.classifier(), plan.preprocessor())),
            outer_iterations: iterations,
            stopped_early: stopped,
        });
    }

    pub fn phase_three(
        &mut self,
        mode: SweepMode,
        evaluations: &[EvaluationRecord],
        best: &EvaluationRecord,
        criterion: Metric,
        stopped: bool,
    ) {
        let mut running = f64::NEG_INFINITY;
        let episodes = evaluations
            .iter()
            .map(|e| {
                running = running.max(e.score(criterion));
                SweepEpisode {
                    episode: e.episode,
                    classifier_params: e.classifier_params.clone(),
                    preprocessor_params: e.preprocessor_params.clone(),
                    score: e.score(criterion),
                    best_so_far: running,
                }
            })
            .collect();
        self.phase3 = Some(SweepReport { mode, episodes, best_evaluation_id: best.id.clone(), stopped_early: stopped });
    }

    pub fn finish(&self, status: SessionStatus, model: &MachineLearningModel, evaluations: usize, failures: usize) -> Report {
        let input = &self.config.input;
        Report {
            session_id: self.session_id.clone(),
            dataset: input.data_input.clone(),
            target: input.target_name.clone(),
            status,
            selection_criteria: input.selection_criteria,
            folds: input.folds,
            profiling_episodes: input.model_profiling_episode,
            search_episodes: input.model_search_episode,
            seed: self.config.seed,
            phase1: self.phase1.clone(),
            phase2: self.phase2.clone(),
            phase3: self.phase3.clone(),
            final_model: FinalModel {
                model_id: model.id.clone(),
                evaluation_id: model.evaluation_id.clone(),
                classifier: model.algorithm,
                preprocessor: model.preprocessor,
                featurizers: model.features.iter().map(|a| (a.column.clone(), a.featurizer)).collect(),
                hyperparameters: model.hyperparameters.clone(),
                preprocessor_parameters: model.preprocessor_parameters.clone(),
                cross_validation: model.metrics.clone(),
                labels: model.labels.iter().map(|l| l.value.clone()).collect(),
                artifact: model.artifact_path.as_ref().map(|_| super::ARTIFACT_FILE.to_string()),
            },
            evaluations,
            failures,
            feedback_applied: self.feedback_applied,
        }
    }
}
