//! Hyper-parameter values, spaces, random sampling and grids.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{ClassifierAlgorithm as C, Component, FeaturizerAlgorithm as F, PreprocessorAlgorithm as P};

/// Sentinel token for an unbounded tree depth.
pub const UNLIMITED: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Token(String),
}

impl ParamValue {
    pub fn tok(s: &str) -> ParamValue {
        ParamValue::Token(s.to_string())
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(x) => write!(f, "{x:.6e}"),
            ParamValue::Token(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet(pub BTreeMap<String, ParamValue>);

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn real(&self, name: &str, default: f64) -> f64 {
        match self.0.get(name) {
            Some(ParamValue::Real(x)) => *x,
            Some(ParamValue::Int(i)) => *i as f64,
            _ => default,
        }
    }

    pub fn int(&self, name: &str, default: i64) -> i64 {
        match self.0.get(name) {
            Some(ParamValue::Int(i)) => *i,
            Some(ParamValue::Real(x)) => x.round() as i64,
            _ => default,
        }
    }

    pub fn boolean(&self, name: &str, default: bool) -> bool {
        match self.0.get(name) {
            Some(ParamValue::Bool(b)) => *b,
            _ => default,
        }
    }

    pub fn token(&self, name: &str) -> Option<&str> {
        match self.0.get(name) {
            Some(ParamValue::Token(t)) => Some(t),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "camelCase")]
pub enum Distribution {
    LogUniform { low: f64, high: f64 },
    Uniform { low: f64, high: f64 },
    UniformInt { low: i64, high: i64 },
    Choice { options: Vec<ParamValue> },
}

impl Distribution {
    pub fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            Distribution::LogUniform { low, high } => {
                ParamValue::Real(rng.random_range(low.ln()..=high.ln()).exp().clamp(*low, *high))
            }
            Distribution::Uniform { low, high } => ParamValue::Real(rng.random_range(*low..=*high)),
            Distribution::UniformInt { low, high } => ParamValue::Int(rng.random_range(*low..=*high)),
            Distribution::Choice { options } => options[rng.random_range(0..options.len())].clone(),
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Distribution::LogUniform { low, high }, ParamValue::Real(x))
            | (Distribution::Uniform { low, high }, ParamValue::Real(x)) => x >= low && x <= high,
            (Distribution::UniformInt { low, high }, ParamValue::Int(x)) => x >= low && x <= high,
            (Distribution::Choice { options }, v) => options.contains(v),
            _ => false,
        }
    }

    /// Three representative points: both ends and the (geometric) midpoint.
    pub fn grid_points(&self) -> Vec<ParamValue> {
        match self {
            Distribution::LogUniform { low, high } => vec![
                ParamValue::Real(*low),
                ParamValue::Real((low * high).sqrt()),
                ParamValue::Real(*high),
            ],
            Distribution::Uniform { low, high } => vec![
                ParamValue::Real(*low),
                ParamValue::Real((low + high) / 2.0),
                ParamValue::Real(*high),
            ],
            Distribution::UniformInt { low, high } => {
                let mut v = vec![*low, low + (high - low) / 2, *high];
                v.dedup();
                v.into_iter().map(ParamValue::Int).collect()
            }
            Distribution::Choice { options } if options.len() <= 3 => options.clone(),
            Distribution::Choice { options } => {
                let n = options.len();
                vec![options[0].clone(), options[n / 2].clone(), options[n - 1].clone()]
            }
        }
    }
}

/// Ordered parameter declarations; order is the grid priority.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace(pub Vec<(String, Distribution)>);

impl ParamSpace {
    fn of(items: Vec<(&str, Distribution)>) -> Self {
        ParamSpace(items.into_iter().map(|(n, d)| (n.to_string(), d)).collect())
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, d) in &self.0 {
            let ok = match d {
                Distribution::LogUniform { low, high } => *low > 0.0 && low < high,
                Distribution::Uniform { low, high } => low < high,
                Distribution::UniformInt { low, high } => low < high,
                Distribution::Choice { options } => !options.is_empty(),
            };
            if !ok {
                return Err(format!("degenerate distribution for {name}"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, params: &ParamSet) -> bool {
        self.0.iter().all(|(n, d)| params.get(n).is_some_and(|v| d.contains(v)))
            && params.0.len() == self.0.len()
    }
}

fn lu(low: f64, high: f64) -> Distribution {
    Distribution::LogUniform { low, high }
}

fn ui(low: i64, high: i64) -> Distribution {
    Distribution::UniformInt { low, high }
}

fn uniform(low: f64, high: f64) -> Distribution {
    Distribution::Uniform { low, high }
}

fn choice(options: Vec<ParamValue>) -> Distribution {
    Distribution::Choice { options }
}

fn ints(v: &[i64]) -> Vec<ParamValue> {
    v.iter().map(|i| ParamValue::Int(*i)).collect()
}

fn toks(v: &[&str]) -> Vec<ParamValue> {
    v.iter().map(|t| ParamValue::tok(t)).collect()
}

pub fn param_space(component: Component) -> ParamSpace {
    use ParamValue::Bool;
    match component {
        Component::Classifier(c) => match c {
            C::Logistic => ParamSpace::of(vec![
                ("C", lu(1e-3, 1e3)),
                ("norm", choice(toks(&["l1", "l2"]))),
                ("tolerance", lu(1e-5, 1e-2)),
                ("balance", choice(vec![Bool(true), Bool(false)])),
                ("maxIterations", choice(ints(&[100, 500, 1000]))),
                ("solver", choice(toks(&["gd"]))),
            ]),
            C::RandomForest => {
                let mut depths = vec![ParamValue::tok(UNLIMITED)];
                depths.extend(ints(&(4..=16).collect::<Vec<_>>()));
                ParamSpace::of(vec![
                    ("trees", ui(10, 200)),
                    ("maxDepth", choice(depths)),
                    ("minSamplesSplit", ui(2, 10)),
                ])
            }
            C::GaussianNb => ParamSpace::of(vec![("varSmoothing", lu(1e-11, 1e-7))]),
            C::MultinomialNb => ParamSpace::of(vec![("alpha", lu(1e-3, 10.0))]),
            C::Sgd => ParamSpace::of(vec![
                ("alpha", lu(1e-6, 1e-2)),
                ("loss", choice(toks(&["hinge", "logistic"]))),
                ("epochs", choice(ints(&[5, 20, 50]))),
            ]),
            C::LinearSvc => ParamSpace::of(vec![
                ("C", lu(1e-3, 1e2)),
                ("tolerance", lu(1e-5, 1e-2)),
                ("maxIterations", choice(ints(&[100, 500, 1000]))),
            ]),
            C::GradientBoosting => ParamSpace::of(vec![
                ("learningRate", lu(0.01, 0.5)),
                ("stages", ui(20, 150)),
                ("maxDepth", ui(2, 6)),
            ]),
        },
        Component::Preprocessor(p) => match p {
            P::Pca | P::TruncatedSvd | P::FastIca => {
                ParamSpace::of(vec![("componentFraction", uniform(0.2, 0.95))])
            }
            P::KernelPca => ParamSpace::of(vec![
                ("componentFraction", uniform(0.2, 0.95)),
                ("gamma", lu(1e-3, 1.0)),
            ]),
            P::RbfSampler | P::Nystroem => ParamSpace::of(vec![
                ("gamma", lu(1e-3, 1.0)),
                ("components", choice(ints(&[100, 200, 400]))),
            ]),
            P::SelectKBest => ParamSpace::of(vec![("kFraction", uniform(0.1, 1.0))]),
            P::SelectPercentile => ParamSpace::of(vec![("percentile", ui(10, 100))]),
            P::RandomTreesEmbedding => {
                ParamSpace::of(vec![("trees", ui(5, 30)), ("maxDepth", ui(2, 6))])
            }
            P::Noop | P::MinMaxScaler | P::RobustScaler | P::AbsScaler | P::StdScaler => {
                ParamSpace::default()
            }
        },
        Component::Featurizer(f) => match f {
            F::HashingVectorizer => {
                ParamSpace::of(vec![("nFeatures", choice(ints(&[1 << 16, 1 << 18, 1 << 20])))])
            }
            F::CountVectorizer => ParamSpace::of(vec![("minDf", choice(ints(&[1, 2, 3])))]),
            F::TfidfVectorizer => ParamSpace::of(vec![
                ("minDf", choice(ints(&[1, 2, 3]))),
                ("sublinearTf", choice(vec![Bool(false), Bool(true)])),
            ]),
            F::OneHot | F::MinMaxScaler | F::StdScaler | F::RobustScaler => ParamSpace::default(),
        },
    }
}

/// Seeded draw from `component`'s space.
pub fn sample_params(component: Component, seed: u64) -> ParamSet {
    sample_from(&param_space(component), seed)
}

pub fn sample_from(space: &ParamSpace, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamSet(space.0.iter().map(|(n, d)| (n.clone(), d.sample(&mut rng))).collect())
}

/// Cartesian product of three-point grids, truncated to `limit`.
///
/// Parameters earlier in `spaces` (and earlier within a space) cycle fastest, so
/// a truncated grid still sweeps the highest-priority parameters completely.
pub fn grid(spaces: &[ParamSpace], limit: usize) -> Vec<Vec<ParamSet>> {
    let axes: Vec<(usize, &str, Vec<ParamValue>)> = spaces
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.0.iter().map(move |(n, d)| (k, n.as_str(), d.grid_points())))
        .collect();
    let total: usize = axes.iter().map(|a| a.2.len()).try_fold(1usize, usize::checked_mul).unwrap_or(usize::MAX);
    let count = total.min(limit);
    let mut out = Vec::with_capacity(count);
    let mut digits = vec![0usize; axes.len()];
    for _ in 0..count {
        let mut sets = vec![ParamSet::new(); spaces.len()];
        for (a, (k, name, points)) in axes.iter().enumerate() {
            sets[*k].0.insert(name.to_string(), points[digits[a]].clone());
        }
        out.push(sets);
        for (a, axis) in axes.iter().enumerate() {
            digits[a] += 1;
            if digits[a] < axis.2.len() {
                break;
            }
            digits[a] = 0;
        }
    }
    out
}
