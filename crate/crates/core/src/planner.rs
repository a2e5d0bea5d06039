//! Grounded pipeline planner.
//!
//! The action theory of the pipeline domain always yields plans of one shape:
//! `import_train → initfeaturizer per column → initpreprocessor → crossvalidate → train`.
//! Grounding therefore reduces to enumerating the legal featurizer assignments and
//! (classifier, preprocessor, representation) triples; planning is an argmax over
//! that product under the learned ρ values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::DatasetSchema;
use crate::rl::ValueTable;
use crate::types::{
    ClassifierAlgorithm, Component, FeatureType, FeaturizerAlgorithm, PreprocessorAlgorithm,
    Representation,
};

/// Estimate contributed by a step whose ρ has never been learned.
pub const OPTIMISTIC_DEFAULT: f64 = 10.0;

const MAX_GROUNDED_PLANS: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("{0} set is empty")]
    EmptyCandidates(&'static str),
    #[error("override references unknown column `{0}`")]
    UnknownColumn(String),
    #[error("target column `{0}` cannot take a featurizer")]
    TargetOverride(String),
    #[error("featurizer {featurizer} is incompatible with {column} ({feature_type}); set force to apply it anyway")]
    IncompatibleOverride {
        column: String,
        featurizer: FeaturizerAlgorithm,
        feature_type: FeatureType,
    },
    #[error("uncoverable column `{0}`: no compatible candidate featurizer")]
    UncoverableColumn(String),
    #[error("dataset has no feature columns")]
    NoFeatureColumns,
    #[error("grounded space has {0} plans, more than the supported maximum")]
    TooLarge(u128),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerOverride {
    pub featurizer: FeaturizerAlgorithm,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchSpaceConfig {
    pub candidate_classifiers: BTreeSet<ClassifierAlgorithm>,
    pub candidate_preprocessors: BTreeSet<PreprocessorAlgorithm>,
    pub featurizer_overrides: BTreeMap<String, FeaturizerOverride>,
    pub candidate_featurizers: BTreeSet<FeaturizerAlgorithm>,
}

impl SearchSpaceConfig {
    /// Given classifiers and preprocessors, every featurizer as candidate and no overrides.
    pub fn new(
        classifiers: impl IntoIterator<Item = ClassifierAlgorithm>,
        preprocessors: impl IntoIterator<Item = PreprocessorAlgorithm>,
    ) -> Self {
        SearchSpaceConfig {
            candidate_classifiers: classifiers.into_iter().collect(),
            candidate_preprocessors: preprocessors.into_iter().collect(),
            featurizer_overrides: BTreeMap::new(),
            candidate_featurizers: FeaturizerAlgorithm::ALL.iter().copied().collect(),
        }
    }

    pub fn with_override(mut self, column: &str, featurizer: FeaturizerAlgorithm) -> Self {
        self.featurizer_overrides
            .insert(column.to_string(), FeaturizerOverride { featurizer, force: false });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompatibilityFacts {
    pub accepts_sparse: BTreeSet<Component>,
    pub compatible: BTreeSet<(FeatureType, FeaturizerAlgorithm)>,
    pub default_featurizer: BTreeMap<FeatureType, FeaturizerAlgorithm>,
}

impl CompatibilityFacts {
    pub fn is_compatible(&self, ty: FeatureType, f: FeaturizerAlgorithm) -> bool {
        self.compatible.contains(&(ty, f))
    }

    pub fn accepts_sparse(&self, c: Component) -> bool {
        self.accepts_sparse.contains(&c)
    }
}

impl Default for CompatibilityFacts {
    fn default() -> Self {
        use ClassifierAlgorithm as C;
        use FeatureType as T;
        use FeaturizerAlgorithm as F;
        use PreprocessorAlgorithm as P;
        let accepts_sparse = [
            Component::Classifier(C::Logistic),
            Component::Classifier(C::Sgd),
            Component::Classifier(C::MultinomialNb),
            Component::Classifier(C::LinearSvc),
            Component::Preprocessor(P::Noop),
            Component::Preprocessor(P::SelectKBest),
            Component::Preprocessor(P::TruncatedSvd),
            Component::Featurizer(F::HashingVectorizer),
            Component::Featurizer(F::CountVectorizer),
            Component::Featurizer(F::TfidfVectorizer),
        ]
        .into_iter()
        .collect();
        let compatible = [
            (T::Integer, F::MinMaxScaler),
            (T::Integer, F::StdScaler),
            (T::Integer, F::RobustScaler),
            (T::Integer, F::OneHot),
            (T::Float, F::MinMaxScaler),
            (T::Float, F::StdScaler),
            (T::Float, F::RobustScaler),
            (T::Categorical, F::OneHot),
            (T::Text, F::HashingVectorizer),
            (T::Text, F::CountVectorizer),
            (T::Text, F::TfidfVectorizer),
        ]
        .into_iter()
        .collect();
        let default_featurizer = [
            (T::Categorical, F::OneHot),
            (T::Float, F::StdScaler),
            (T::Integer, F::MinMaxScaler),
            (T::Text, F::HashingVectorizer),
        ]
        .into_iter()
        .collect();
        CompatibilityFacts { accepts_sparse, compatible, default_featurizer }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundedColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub feature_type: FeatureType,
    /// Legal featurizers in enum order.
    pub featurizers: Vec<FeaturizerAlgorithm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundedPipeline {
    pub classifier: ClassifierAlgorithm,
    pub preprocessor: PreprocessorAlgorithm,
    pub representation: Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundedDomain {
    pub dataset_name: String,
    pub target_name: String,
    pub columns: Vec<GroundedColumn>,
    /// Ordered by (classifier, preprocessor).
    pub pipelines: Vec<GroundedPipeline>,
    pub sparse: bool,
}

impl GroundedDomain {
    pub fn assignment_count(&self) -> u128 {
        self.columns.iter().map(|c| c.featurizers.len() as u128).product()
    }

    pub fn plan_count(&self) -> u128 {
        self.assignment_count() * self.pipelines.len() as u128
    }

    /// Featurizer assignments in lexicographic enum order.
    pub fn assignments(&self) -> Assignments<'_> {
        Assignments {
            domain: self,
            cursor: Some(vec![0; self.columns.len()]).filter(|_| self.assignment_count() > 0),
        }
    }

    /// All plans of the grounded space with their quality estimates, in tie-break order.
    pub fn enumerate_plans(&self, values: &ValueTable) -> Vec<Plan> {
        let mut plans = Vec::new();
        for p in &self.pipelines {
            for a in self.assignments() {
                plans.push(Plan::assemble(self, &a, p, values));
            }
        }
        plans
    }
}

pub struct Assignments<'a> {
    domain: &'a GroundedDomain,
    cursor: Option<Vec<usize>>,
}

impl Iterator for Assignments<'_> {
    type Item = Vec<FeaturizerAlgorithm>;

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.cursor.as_mut()?;
        let item = cur
            .iter()
            .zip(&self.domain.columns)
            .map(|(&i, c)| c.featurizers[i])
            .collect();
        let mut pos = cur.len();
        loop {
            if pos == 0 {
                self.cursor = None;
                break;
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < self.domain.columns[pos].featurizers.len() {
                break;
            }
            cur[pos] = 0;
        }
        Some(item)
    }
}

pub fn build_domain(
    schema: &DatasetSchema,
    config: &SearchSpaceConfig,
    facts: &CompatibilityFacts,
) -> Result<GroundedDomain, PlannerError> {
    if config.candidate_classifiers.is_empty() {
        return Err(PlannerError::EmptyCandidates("classifier"));
    }
    if config.candidate_preprocessors.is_empty() {
        return Err(PlannerError::EmptyCandidates("preprocessor"));
    }
    let target = schema.target_name.clone().unwrap_or_default();
    for (col, ov) in &config.featurizer_overrides {
        let Some(c) = schema.column(col) else {
            return Err(PlannerError::UnknownColumn(col.clone()));
        };
        if *col == target {
            return Err(PlannerError::TargetOverride(col.clone()));
        }
        if !ov.force && !facts.is_compatible(c.feature_type, ov.featurizer) {
            return Err(PlannerError::IncompatibleOverride {
                column: col.clone(),
                featurizer: ov.featurizer,
                feature_type: c.feature_type,
            });
        }
    }
    let features: Vec<_> = schema.feature_columns().collect();
    if features.is_empty() {
        return Err(PlannerError::NoFeatureColumns);
    }
    let types: BTreeSet<FeatureType> = features.iter().map(|c| c.feature_type).collect();
    let sparse = types.len() == 1 && types.contains(&FeatureType::Text);

    let mut columns = Vec::with_capacity(features.len());
    for c in features {
        let mut options: Vec<FeaturizerAlgorithm> =
            if let Some(ov) = config.featurizer_overrides.get(&c.name) {
                vec![ov.featurizer]
            } else {
                let default = facts.default_featurizer.get(&c.feature_type).copied();
                match default.filter(|d| config.candidate_featurizers.contains(d)) {
                    Some(d) => vec![d],
                    None => config
                        .candidate_featurizers
                        .iter()
                        .copied()
                        .filter(|f| facts.is_compatible(c.feature_type, *f))
                        .collect(),
                }
            };
        if sparse {
            options.retain(|f| facts.accepts_sparse(Component::Featurizer(*f)));
        }
        if options.is_empty() {
            return Err(PlannerError::UncoverableColumn(c.name.clone()));
        }
        columns.push(GroundedColumn {
            name: c.name.clone(),
            feature_type: c.feature_type,
            featurizers: options,
        });
    }

    let mut pipelines = Vec::new();
    for &classifier in &config.candidate_classifiers {
        for &preprocessor in &config.candidate_preprocessors {
            if sparse {
                if facts.accepts_sparse(Component::Classifier(classifier))
                    && facts.accepts_sparse(Component::Preprocessor(preprocessor))
                {
                    pipelines.push(GroundedPipeline {
                        classifier,
                        preprocessor,
                        representation: Representation::Sparse,
                    });
                }
            } else {
                pipelines.push(GroundedPipeline {
                    classifier,
                    preprocessor,
                    representation: Representation::Dense,
                });
            }
        }
    }
    let domain = GroundedDomain {
        dataset_name: schema.dataset_name.clone(),
        target_name: target,
        columns,
        pipelines,
        sparse,
    };
    let n = domain.plan_count();
    if n > MAX_GROUNDED_PLANS {
        return Err(PlannerError::TooLarge(n));
    }
    Ok(domain)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum PlanStep {
    #[serde(rename = "import_train")]
    ImportTrain { dataset: String },
    #[serde(rename = "initfeaturizer")]
    InitFeaturizer {
        featurizer: FeaturizerAlgorithm,
        column: String,
        dataset: String,
    },
    #[serde(rename = "initpreprocessor")]
    InitPreprocessor {
        preprocessor: PreprocessorAlgorithm,
        dataset: String,
    },
    #[serde(rename = "crossvalidate")]
    CrossValidate {
        classifier: ClassifierAlgorithm,
        preprocessor: PreprocessorAlgorithm,
        representation: Representation,
        target: String,
    },
    #[serde(rename = "train")]
    Train {
        classifier: ClassifierAlgorithm,
        preprocessor: PreprocessorAlgorithm,
        representation: Representation,
        target: String,
    },
}

impl PlanStep {
    pub fn action_name(&self) -> &'static str {
        match self {
            PlanStep::ImportTrain { .. } => "import_train",
            PlanStep::InitFeaturizer { .. } => "initfeaturizer",
            PlanStep::InitPreprocessor { .. } => "initpreprocessor",
            PlanStep::CrossValidate { .. } => "crossvalidate",
            PlanStep::Train { .. } => "train",
        }
    }

    /// Featurizer, preprocessor and crossvalidate steps carry learned values.
    pub fn contributes(&self) -> bool {
        matches!(
            self,
            PlanStep::InitFeaturizer { .. }
                | PlanStep::InitPreprocessor { .. }
                | PlanStep::CrossValidate { .. }
        )
    }

    /// Position of the step in the five-phase listing.
    pub fn phase_index(&self) -> usize {
        match self {
            PlanStep::ImportTrain { .. } => 1,
            PlanStep::InitFeaturizer { .. } => 2,
            PlanStep::InitPreprocessor { .. } => 3,
            PlanStep::CrossValidate { .. } => 4,
            PlanStep::Train { .. } => 5,
        }
    }
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanStep::ImportTrain { dataset } => write!(f, "import_train({dataset})"),
            PlanStep::InitFeaturizer { featurizer, column, dataset } => {
                write!(f, "initfeaturizer({featurizer},{column},{dataset})")
            }
            PlanStep::InitPreprocessor { preprocessor, dataset } => {
                write!(f, "initpreprocessor({preprocessor},{dataset})")
            }
            PlanStep::CrossValidate { classifier, preprocessor, representation, target } => {
                write!(f, "crossvalidate({classifier},{preprocessor},{representation},{target})")
            }
            PlanStep::Train { classifier, preprocessor, representation, target } => {
                write!(f, "train({classifier},{preprocessor},{representation},{target})")
            }
        }
    }
}

/// Progress through a plan; its canonical key indexes the value table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanState {
    pub imported: bool,
    pub featurized: BTreeMap<String, FeaturizerAlgorithm>,
    pub preprocessor: Option<PreprocessorAlgorithm>,
    pub validated: bool,
    pub trained: bool,
}

impl PlanState {
    pub fn key(&self) -> String {
        let feats: Vec<String> =
            self.featurized.iter().map(|(c, f)| format!("{c}:{f}")).collect();
        format!(
            "imported={}|featurized=[{}]|preprocessor={}|validated={}|trained={}",
            u8::from(self.imported),
            feats.join(","),
            self.preprocessor.map_or("-", PreprocessorAlgorithm::as_str),
            u8::from(self.validated),
            u8::from(self.trained),
        )
    }

    /// Effect of executing `step` in this state.
    pub fn apply(&self, step: &PlanStep) -> PlanState {
        let mut next = self.clone();
        match step {
            PlanStep::ImportTrain { .. } => next.imported = true,
            PlanStep::InitFeaturizer { featurizer, column, .. } => {
                next.featurized.insert(column.clone(), *featurizer);
            }
            PlanStep::InitPreprocessor { preprocessor, .. } => next.preprocessor = Some(*preprocessor),
            PlanStep::CrossValidate { .. } => next.validated = true,
            PlanStep::Train { .. } => next.trained = true,
        }
        next
    }

    fn progress(&self) -> usize {
        usize::from(self.imported)
            + self.featurized.len()
            + usize::from(self.preprocessor.is_some())
            + usize::from(self.validated)
            + usize::from(self.trained)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: PlanState,
    pub step: PlanStep,
    pub next: PlanState,
}

impl Transition {
    pub fn state_key(&self) -> String {
        self.state.key()
    }

    pub fn action_key(&self) -> String {
        self.step.to_string()
    }

    pub fn next_key(&self) -> String {
        self.next.key()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub estimated_quality: f64,
}

impl Plan {
    /// Builds the fixed-shape plan for one assignment and pipeline and scores it.
    pub fn assemble(
        domain: &GroundedDomain,
        assignment: &[FeaturizerAlgorithm],
        pipeline: &GroundedPipeline,
        values: &ValueTable,
    ) -> Plan {
        let dataset = domain.dataset_name.clone();
        let mut steps = vec![PlanStep::ImportTrain { dataset: dataset.clone() }];
        for (col, f) in domain.columns.iter().zip(assignment) {
            steps.push(PlanStep::InitFeaturizer {
                featurizer: *f,
                column: col.name.clone(),
                dataset: dataset.clone(),
            });
        }
        steps.push(PlanStep::InitPreprocessor {
            preprocessor: pipeline.preprocessor,
            dataset,
        });
        steps.push(PlanStep::CrossValidate {
            classifier: pipeline.classifier,
            preprocessor: pipeline.preprocessor,
            representation: pipeline.representation,
            target: domain.target_name.clone(),
        });
        steps.push(PlanStep::Train {
            classifier: pipeline.classifier,
            preprocessor: pipeline.preprocessor,
            representation: pipeline.representation,
            target: domain.target_name.clone(),
        });
        let mut plan = Plan { steps, estimated_quality: 0.0 };
        plan.estimated_quality = estimate_quality(&plan, values);
        plan
    }

    pub fn transitions(&self) -> Vec<Transition> {
        let mut state = PlanState::default();
        self.steps
            .iter()
            .map(|step| {
                let next = state.apply(step);
                let t = Transition { state: state.clone(), step: step.clone(), next: next.clone() };
                state = next;
                t
            })
            .collect()
    }

    fn crossvalidate(&self) -> Option<(ClassifierAlgorithm, PreprocessorAlgorithm, Representation)> {
        self.steps.iter().find_map(|s| match s {
            PlanStep::CrossValidate { classifier, preprocessor, representation, .. } => {
                Some((*classifier, *preprocessor, *representation))
            }
            _ => None,
        })
    }

    pub fn classifier(&self) -> ClassifierAlgorithm {
        self.crossvalidate().expect("plan has a crossvalidate step").0
    }

    pub fn preprocessor(&self) -> PreprocessorAlgorithm {
        self.crossvalidate().expect("plan has a crossvalidate step").1
    }

    pub fn representation(&self) -> Representation {
        self.crossvalidate().expect("plan has a crossvalidate step").2
    }

    /// (column, featurizer) in step order.
    pub fn featurizers(&self) -> Vec<(String, FeaturizerAlgorithm)> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                PlanStep::InitFeaturizer { featurizer, column, .. } => {
                    Some((column.clone(), *featurizer))
                }
                _ => None,
            })
            .collect()
    }

    /// Canonical identity of the pipeline the plan describes.
    pub fn key(&self) -> String {
        self.steps.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
    }

    /// Same steps, ignoring the estimate.
    pub fn same_steps(&self, other: &Plan) -> bool {
        self.steps == other.steps
    }

    /// Numbered listing, one line per phase.
    pub fn listing(&self) -> String {
        let mut lines: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for s in &self.steps {
            lines.entry(s.phase_index()).or_default().push(s.to_string());
        }
        lines
            .into_iter()
            .map(|(k, v)| format!("{k}:{}", v.join(" ")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Structural invariants against the domain it was grounded from.
    pub fn check(&self, domain: &GroundedDomain, facts: &CompatibilityFacts) -> Result<(), String> {
        let states: Vec<PlanState> = self.transitions().into_iter().map(|t| t.next).collect();
        if states.windows(2).any(|w| w[1].progress() <= w[0].progress()) {
            return Err("states do not progress".into());
        }
        let feats = self.featurizers();
        if feats.len() != domain.columns.len() {
            return Err("one featurizer per feature column required".into());
        }
        for ((col, f), g) in feats.iter().zip(&domain.columns) {
            if *col != g.name || !g.featurizers.contains(f) {
                return Err(format!("illegal featurizer {f} for {col}"));
            }
        }
        let (c, p, rep) = self.crossvalidate().ok_or("missing crossvalidate")?;
        if !domain.pipelines.iter().any(|g| {
            g.classifier == c && g.preprocessor == p && g.representation == rep
        }) {
            return Err(format!("pipeline ({c},{p},{rep}) not grounded"));
        }
        if rep == Representation::Sparse {
            let ok = facts.accepts_sparse(Component::Classifier(c))
                && facts.accepts_sparse(Component::Preprocessor(p))
                && feats.iter().all(|(_, f)| facts.accepts_sparse(Component::Featurizer(*f)));
            if !ok {
                return Err("sparse plan with a dense-only component".into());
            }
        }
        let kinds: Vec<usize> = self.steps.iter().map(PlanStep::phase_index).collect();
        if kinds.windows(2).any(|w| w[1] < w[0]) || kinds.first() != Some(&1) || kinds.last() != Some(&5) {
            return Err("steps out of order".into());
        }
        Ok(())
    }
}

/// Σ over contributing steps of learned ρ, or the optimistic default when unexplored.
pub fn estimate_quality(plan: &Plan, values: &ValueTable) -> f64 {
    plan.transitions()
        .iter()
        .filter(|t| t.step.contributes())
        .map(|t| values.rho(&t.state_key(), &t.action_key()).unwrap_or(OPTIMISTIC_DEFAULT))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Plan(Plan),
    NoImprovingPlan { reason: String },
}

impl PlanOutcome {
    pub fn into_plan(self) -> Option<Plan> {
        match self {
            PlanOutcome::Plan(p) => Some(p),
            PlanOutcome::NoImprovingPlan { .. } => None,
        }
    }
}

/// Highest-estimate plan with estimate strictly above `min_quality`; ties go to the
/// lexicographically first (classifier, preprocessor, featurizer assignment).
pub fn generate_plan(domain: &GroundedDomain, values: &ValueTable, min_quality: f64) -> PlanOutcome {
    if domain.plan_count() == 0 {
        return PlanOutcome::NoImprovingPlan { reason: "empty search space".into() };
    }
    let mut best: Option<Plan> = None;
    for pipeline in &domain.pipelines {
        for assignment in domain.assignments() {
            let plan = Plan::assemble(domain, &assignment, pipeline, values);
            if plan.estimated_quality <= min_quality {
                continue;
            }
            if best.as_ref().is_none_or(|b| plan.estimated_quality > b.estimated_quality) {
                best = Some(plan);
            }
        }
    }
    match best {
        Some(p) => PlanOutcome::Plan(p),
        None => PlanOutcome::NoImprovingPlan {
            reason: format!("no plan estimate exceeds {min_quality}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ColumnSchema, DatasetRole};
    use crate::rl::{update, RlConfig};
    use proptest::prelude::*;

    fn schema(cols: &[(&str, FeatureType)], target: &str) -> DatasetSchema {
        DatasetSchema {
            dataset_name: "adult_data".into(),
            columns: cols
                .iter()
                .map(|(n, t)| ColumnSchema { name: n.to_string(), feature_type: *t, source_name: None })
                .collect(),
            target_name: Some(target.into()),
            role: DatasetRole::Train,
        }
    }

    fn adult() -> DatasetSchema {
        use FeatureType::*;
        schema(
            &[
                ("field_age", Integer),
                ("field_workclass", Categorical),
                ("field_education", Categorical),
                ("field_sex", Categorical),
                ("field_race", Categorical),
                ("field_salary", Categorical),
            ],
            "field_salary",
        )
    }

    #[test]
    fn adult_first_plan_shape() {
        let cfg = SearchSpaceConfig::new(
            [ClassifierAlgorithm::GradientBoosting],
            [PreprocessorAlgorithm::Noop],
        )
        .with_override("field_age", FeaturizerAlgorithm::RobustScaler);
        let facts = CompatibilityFacts::default();
        let domain = build_domain(&adult(), &cfg, &facts).unwrap();
        let plan = generate_plan(&domain, &ValueTable::default(), f64::NEG_INFINITY)
            .into_plan()
            .unwrap();
        assert_eq!(plan.estimated_quality, 70.0);
        plan.check(&domain, &facts).unwrap();
        let listing = plan.listing();
        assert!(listing.starts_with("1:import_train(adult_data)\n2:initfeaturizer(robust_scaler,field_age,adult_data)"));
        assert!(listing.contains("initfeaturizer(one_hot,field_sex,adult_data)"));
        assert!(listing.ends_with("5:train(gradient_boosting_classifier,noop,dense,field_salary)"));
    }

    #[test]
    fn defaults_and_fallbacks() {
        use FeatureType::*;
        let s = schema(&[("field_a", Integer), ("field_b", Float), ("field_y", Categorical)], "field_y");
        let mut cfg = SearchSpaceConfig::new([ClassifierAlgorithm::Logistic], [PreprocessorAlgorithm::Noop]);
        let facts = CompatibilityFacts::default();
        let d = build_domain(&s, &cfg, &facts).unwrap();
        assert_eq!(d.columns[0].featurizers, vec![FeaturizerAlgorithm::MinMaxScaler]);
        assert_eq!(d.columns[1].featurizers, vec![FeaturizerAlgorithm::StdScaler]);
        assert_eq!(d.plan_count(), 1);

        cfg.candidate_featurizers =
            [FeaturizerAlgorithm::RobustScaler, FeaturizerAlgorithm::OneHot].into_iter().collect();
        let d = build_domain(&s, &cfg, &facts).unwrap();
        assert_eq!(
            d.columns[0].featurizers,
            vec![FeaturizerAlgorithm::OneHot, FeaturizerAlgorithm::RobustScaler]
        );
        assert_eq!(d.columns[1].featurizers, vec![FeaturizerAlgorithm::RobustScaler]);

        cfg.candidate_featurizers = [FeaturizerAlgorithm::OneHot].into_iter().collect();
        assert_eq!(
            build_domain(&s, &cfg, &facts).unwrap_err(),
            PlannerError::UncoverableColumn("field_b".into())
        );
    }

    #[test]
    fn override_rules() {
        let facts = CompatibilityFacts::default();
        let cfg = SearchSpaceConfig::new([ClassifierAlgorithm::Logistic], [PreprocessorAlgorithm::Noop])
            .with_override("field_sex", FeaturizerAlgorithm::StdScaler);
        assert!(matches!(
            build_domain(&adult(), &cfg, &facts),
            Err(PlannerError::IncompatibleOverride { .. })
        ));
        let mut forced = cfg.clone();
        forced.featurizer_overrides.get_mut("field_sex").unwrap().force = true;
        assert!(build_domain(&adult(), &forced, &facts).is_ok());
        let unknown = SearchSpaceConfig::new([ClassifierAlgorithm::Logistic], [PreprocessorAlgorithm::Noop])
            .with_override("field_zip", FeaturizerAlgorithm::OneHot);
        assert_eq!(
            build_domain(&adult(), &unknown, &facts).unwrap_err(),
            PlannerError::UnknownColumn("field_zip".into())
        );
    }

    #[test]
    fn text_only_dataset_is_sparse_and_filters_dense_components() {
        use FeatureType::*;
        let s = schema(&[("field_body", Text), ("field_y", Categorical)], "field_y");
        let cfg = SearchSpaceConfig::new(
            [ClassifierAlgorithm::RandomForest, ClassifierAlgorithm::Logistic],
            [PreprocessorAlgorithm::Noop, PreprocessorAlgorithm::Pca],
        );
        let d = build_domain(&s, &cfg, &CompatibilityFacts::default()).unwrap();
        assert!(d.sparse);
        assert_eq!(
            d.pipelines,
            vec![GroundedPipeline {
                classifier: ClassifierAlgorithm::Logistic,
                preprocessor: PreprocessorAlgorithm::Noop,
                representation: Representation::Sparse,
            }]
        );
        let only_rf = SearchSpaceConfig::new([ClassifierAlgorithm::RandomForest], [PreprocessorAlgorithm::Noop]);
        let d = build_domain(&s, &only_rf, &CompatibilityFacts::default()).unwrap();
        assert_eq!(
            generate_plan(&d, &ValueTable::default(), f64::NEG_INFINITY),
            PlanOutcome::NoImprovingPlan { reason: "empty search space".into() }
        );
    }

    #[test]
    fn estimate_uses_learned_values_and_defaults() {
        let cfg = SearchSpaceConfig::new([ClassifierAlgorithm::Logistic], [PreprocessorAlgorithm::Noop]);
        let d = build_domain(&adult(), &cfg, &CompatibilityFacts::default()).unwrap();
        let mut values = ValueTable::default();
        let plan = generate_plan(&d, &values, f64::NEG_INFINITY).into_plan().unwrap();
        for t in plan.transitions().iter().filter(|t| t.step.contributes()) {
            let rho = if matches!(t.step, PlanStep::CrossValidate { .. }) { 95.0 } else { -1.0 };
            values.set(&t.state_key(), &t.action_key(), 0.0, rho);
        }
        assert_eq!(estimate_quality(&plan, &values), -6.0 + 95.0);

        let mut one = ValueTable::default();
        let t = &plan.transitions()[1];
        one.set(&t.state_key(), &t.action_key(), 0.0, OPTIMISTIC_DEFAULT);
        assert_eq!(estimate_quality(&plan, &one), estimate_quality(&plan, &ValueTable::default()));
    }

    #[test]
    fn dominant_crossvalidate_value_selects_classifier() {
        let cfg = SearchSpaceConfig::new(
            [ClassifierAlgorithm::GaussianNb, ClassifierAlgorithm::Logistic],
            [PreprocessorAlgorithm::Noop],
        );
        let d = build_domain(&adult(), &cfg, &CompatibilityFacts::default()).unwrap();
        let mut values = ValueTable::default();
        let plans = d.enumerate_plans(&values);
        let logistic = plans.iter().find(|p| p.classifier() == ClassifierAlgorithm::Logistic).unwrap();
        let cv = logistic.transitions().into_iter().find(|t| matches!(t.step, PlanStep::CrossValidate { .. })).unwrap();
        values.set(&cv.state_key(), &cv.action_key(), 0.0, 90.0);
        let plan = generate_plan(&d, &values, f64::NEG_INFINITY).into_plan().unwrap();
        assert_eq!(plan.classifier(), ClassifierAlgorithm::Logistic);
    }

    #[test]
    fn ties_break_in_enum_order() {
        let cfg = SearchSpaceConfig::new(
            [ClassifierAlgorithm::Sgd, ClassifierAlgorithm::Logistic, ClassifierAlgorithm::RandomForest],
            [PreprocessorAlgorithm::Pca, PreprocessorAlgorithm::Noop],
        );
        let d = build_domain(&adult(), &cfg, &CompatibilityFacts::default()).unwrap();
        let plan = generate_plan(&d, &ValueTable::default(), f64::NEG_INFINITY).into_plan().unwrap();
        assert_eq!(plan.classifier(), ClassifierAlgorithm::RandomForest);
        assert_eq!(plan.preprocessor(), PreprocessorAlgorithm::Noop);
    }

    fn arb_domain() -> impl Strategy<Value = (Vec<ClassifierAlgorithm>, Vec<PreprocessorAlgorithm>, Vec<f64>)> {
        (
            prop::sample::subsequence(ClassifierAlgorithm::ALL.to_vec(), 1..=6),
            prop::sample::subsequence(PreprocessorAlgorithm::ALL.to_vec(), 1..=6),
            prop::collection::vec(-20.0f64..20.0, 36 * 3),
        )
    }

    proptest! {
        // Random learned ρ over a 2-option column: generate_plan equals brute force.
        #[test]
        fn generate_plan_matches_brute_force((cs, ps, rhos) in arb_domain(), min_q in -30.0f64..40.0) {
            use FeatureType::*;
            let s = schema(&[("field_a", Integer), ("field_y", Categorical)], "field_y");
            let mut cfg = SearchSpaceConfig::new(cs.clone(), ps.clone());
            cfg.candidate_featurizers = [FeaturizerAlgorithm::StdScaler, FeaturizerAlgorithm::OneHot].into_iter().collect();
            let facts = CompatibilityFacts::default();
            let d = build_domain(&s, &cfg, &facts).unwrap();
            let mut values = ValueTable::default();
            let mut k = 0;
            for plan in d.enumerate_plans(&values) {
                for t in plan.transitions().iter().filter(|t| t.step.contributes()) {
                    if values.rho(&t.state_key(), &t.action_key()).is_none() {
                        values.set(&t.state_key(), &t.action_key(), 0.0, rhos[k % rhos.len()]);
                        k += 1;
                    }
                }
            }
            let all = d.enumerate_plans(&values);
            let brute = all.iter().filter(|p| p.estimated_quality > min_q).fold(None::<&Plan>, |b, p| {
                match b { Some(b) if b.estimated_quality >= p.estimated_quality => Some(b), _ => Some(p) }
            });
            match generate_plan(&d, &values, min_q) {
                PlanOutcome::Plan(p) => {
                    prop_assert!(p.estimated_quality > min_q);
                    prop_assert!(p.check(&d, &facts).is_ok());
                    prop_assert_eq!(Some(&p), brute);
                }
                PlanOutcome::NoImprovingPlan { .. } => prop_assert!(brute.is_none()),
            }
        }

        #[test]
        fn shrinking_candidates_never_adds_plans((cs, ps, _r) in arb_domain(), drop_c in any::<prop::sample::Index>()) {
            let facts = CompatibilityFacts::default();
            let full = build_domain(&adult(), &SearchSpaceConfig::new(cs.clone(), ps.clone()), &facts).unwrap();
            let mut smaller = cs.clone();
            if smaller.len() > 1 { smaller.remove(drop_c.index(smaller.len())); }
            let sub = build_domain(&adult(), &SearchSpaceConfig::new(smaller, ps.clone()), &facts).unwrap();
            for p in &sub.pipelines { prop_assert!(full.pipelines.contains(p)); }
        }
    }

    #[test]
    fn learned_values_change_the_next_plan() {
        let cfg = SearchSpaceConfig::new(
            [ClassifierAlgorithm::GaussianNb, ClassifierAlgorithm::Logistic],
            [PreprocessorAlgorithm::Noop],
        );
        let d = build_domain(&adult(), &cfg, &CompatibilityFacts::default()).unwrap();
        let mut values = ValueTable::default();
        let first = generate_plan(&d, &values, f64::NEG_INFINITY).into_plan().unwrap();
        let rl = RlConfig::default();
        for t in first.transitions().iter().filter(|t| t.step.contributes()) {
            update(&mut values, &t.state_key(), &t.action_key(), &t.next_key(), -1.0, &rl).unwrap();
        }
        let second = generate_plan(&d, &values, f64::NEG_INFINITY).into_plan().unwrap();
        assert_ne!(first.classifier(), second.classifier());
    }
}
