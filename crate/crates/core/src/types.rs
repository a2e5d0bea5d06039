//! Closed vocabularies shared by every subsystem.
//!
//! Declaration order is significant: it is the enum order used for
//! deterministic tie-breaking in the planner and the orchestrator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $token)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownToken;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(UnknownToken {
                        vocabulary: stringify!($name),
                        token: other.to_string(),
                    }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {vocabulary} token `{token}`")]
pub struct UnknownToken {
    pub vocabulary: &'static str,
    pub token: String,
}

vocabulary! {
    /// Classification algorithms a pipeline can end in.
    ClassifierAlgorithm {
        RandomForest => "random_forest_classifier",
        LinearSvc => "linear_svc_classifier",
        GaussianNb => "gaussian_nb_classifier",
        MultinomialNb => "multinomial_nb_classifier",
        Logistic => "logistic_classifier",
        Sgd => "sgd_classifier",
        GradientBoosting => "gradient_boosting_classifier",
    }
}

vocabulary! {
    /// Whole-matrix transforms applied between featurization and classification.
    PreprocessorAlgorithm {
        Noop => "noop",
        TruncatedSvd => "truncatedSVD",
        Pca => "pca",
        KernelPca => "kernelPCA",
        FastIca => "fastICA",
        RbfSampler => "rbfsampler",
        Nystroem => "nystroem",
        SelectKBest => "selectkbest",
        SelectPercentile => "selectpercentile",
        MinMaxScaler => "minmaxscaler",
        RobustScaler => "robustscaler",
        AbsScaler => "absscaler",
        RandomTreesEmbedding => "random_trees_embedding",
        StdScaler => "std_scaler",
    }
}

vocabulary! {
    /// Per-column transforms producing numeric feature blocks.
    FeaturizerAlgorithm {
        OneHot => "one_hot",
        MinMaxScaler => "min_max_scaler",
        StdScaler => "std_scaler",
        RobustScaler => "robust_scaler",
        HashingVectorizer => "hashing_vectorizer",
        CountVectorizer => "count_vectorizer",
        TfidfVectorizer => "tfidf_vectorizer",
    }
}

vocabulary! {
    FeatureType {
        Integer => "integer",
        Float => "float",
        Categorical => "categorical",
        Text => "text",
    }
}

vocabulary! {
    Metric {
        Accuracy => "accuracy",
        F1 => "f1",
        Precision => "precision",
        Recall => "recall",
    }
}

vocabulary! {
    Representation {
        Dense => "dense",
        Sparse => "sparse",
    }
}

impl FeaturizerAlgorithm {
    pub fn produces_sparse(self) -> bool {
        matches!(
            self,
            FeaturizerAlgorithm::HashingVectorizer
                | FeaturizerAlgorithm::CountVectorizer
                | FeaturizerAlgorithm::TfidfVectorizer
        )
    }
}

impl ClassifierAlgorithm {
    /// Components with a native implementation that every deployment must provide.
    pub const TIER_A: &'static [ClassifierAlgorithm] = &[
        ClassifierAlgorithm::RandomForest,
        ClassifierAlgorithm::GaussianNb,
        ClassifierAlgorithm::MultinomialNb,
        ClassifierAlgorithm::Logistic,
        ClassifierAlgorithm::Sgd,
    ];
}

impl PreprocessorAlgorithm {
    pub const TIER_A: &'static [PreprocessorAlgorithm] = &[
        PreprocessorAlgorithm::Noop,
        PreprocessorAlgorithm::Pca,
        PreprocessorAlgorithm::SelectKBest,
        PreprocessorAlgorithm::MinMaxScaler,
        PreprocessorAlgorithm::RobustScaler,
        PreprocessorAlgorithm::AbsScaler,
        PreprocessorAlgorithm::StdScaler,
    ];
}

/// Any component that can appear in a plan, used for compatibility facts and
/// hyper-parameter spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "role", content = "name", rename_all = "camelCase")]
pub enum Component {
    Featurizer(FeaturizerAlgorithm),
    Preprocessor(PreprocessorAlgorithm),
    Classifier(ClassifierAlgorithm),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Featurizer(x) => write!(f, "{x}"),
            Component::Preprocessor(x) => write!(f, "{x}"),
            Component::Classifier(x) => write!(f, "{x}"),
        }
    }
}
