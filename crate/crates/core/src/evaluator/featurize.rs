//! Per-column featurizers. Statistics are always fitted on the rows passed to
//! [`fit_featurizer`]; transforming other rows never refits.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::codec;
use super::matrix::{DenseMatrix, FeatureMatrix, SparseMatrix};
use super::params::ParamSet;
use super::EvalError;
use crate::ingest::{ColumnValues, Dataset};
use crate::seed::fnv1a;
use crate::types::FeaturizerAlgorithm;

pub const DEFAULT_HASH_FEATURES: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedFeaturizer {
    OneHot {
        categories: Vec<String>,
    },
    MinMax {
        min: f64,
        max: f64,
        mean: f64,
    },
    Std {
        mean: f64,
        std: f64,
    },
    Robust {
        median: f64,
        iqr: f64,
        mean: f64,
    },
    Hashing {
        n_features: usize,
    },
    Count {
        vocabulary: Vec<String>,
    },
    Tfidf {
        vocabulary: Vec<String>,
        #[serde(with = "codec::f64s")]
        idf: Vec<f64>,
        sublinear_tf: bool,
    },
}

/// Lowercased Unicode words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().unicode_words().map(str::to_string).collect()
}

fn numeric_cells(
    column: &ColumnValues,
    name: &str,
    rows: &[usize],
) -> Result<Vec<Option<f64>>, EvalError> {
    match column {
        ColumnValues::Integer(_) | ColumnValues::Float(_) => {
            Ok(rows.iter().map(|&r| column.numeric(r)).collect())
        }
        _ => Err(EvalError::Incompatible(format!(
            "column {name} ({}) is not numeric",
            column.feature_type()
        ))),
    }
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn fit_featurizer(
    algorithm: FeaturizerAlgorithm,
    name: &str,
    column: &ColumnValues,
    rows: &[usize],
    params: &ParamSet,
) -> Result<FittedFeaturizer, EvalError> {
    use FeaturizerAlgorithm as F;
    Ok(match algorithm {
        F::OneHot => {
            let mut seen = HashMap::new();
            let mut categories = Vec::new();
            for &r in rows {
                let t = column.token(r);
                if !seen.contains_key(&t) {
                    seen.insert(t.clone(), categories.len());
                    categories.push(t);
                }
            }
            FittedFeaturizer::OneHot { categories }
        }
        F::MinMaxScaler | F::StdScaler | F::RobustScaler => {
            let present: Vec<f64> = numeric_cells(column, name, rows)?.into_iter().flatten().collect();
            let mean = mean_of(&present);
            match algorithm {
                F::MinMaxScaler => FittedFeaturizer::MinMax {
                    min: present.iter().copied().fold(f64::INFINITY, f64::min).min(mean),
                    max: present.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(mean),
                    mean,
                },
                F::StdScaler => {
                    let var = if present.is_empty() {
                        0.0
                    } else {
                        present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / present.len() as f64
                    };
                    FittedFeaturizer::Std { mean, std: var.sqrt() }
                }
                _ => {
                    let mut sorted = present.clone();
                    sorted.sort_by(f64::total_cmp);
                    let median = quantile(&sorted, 0.5);
                    FittedFeaturizer::Robust {
                        median,
                        iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
                        mean,
                    }
                }
            }
        }
        F::HashingVectorizer => {
            let n = params.int("nFeatures", DEFAULT_HASH_FEATURES as i64);
            if n < 1 {
                return Err(EvalError::InvalidParams(format!("nFeatures {n} < 1")));
            }
            FittedFeaturizer::Hashing { n_features: n as usize }
        }
        F::CountVectorizer | F::TfidfVectorizer => {
            let min_df = params.int("minDf", 1).max(1) as usize;
            let mut df: BTreeMap<String, usize> = BTreeMap::new();
            for &r in rows {
                let mut tokens = tokenize(&column.token(r));
                tokens.sort_unstable();
                tokens.dedup();
                for t in tokens {
                    *df.entry(t).or_default() += 1;
                }
            }
            let kept: Vec<(String, usize)> = df.into_iter().filter(|(_, c)| *c >= min_df).collect();
            if kept.is_empty() {
                return Err(EvalError::EmptyVocabulary(name.to_string()));
            }
            if algorithm == F::CountVectorizer {
                FittedFeaturizer::Count { vocabulary: kept.into_iter().map(|(t, _)| t).collect() }
            } else {
                let n = rows.len() as f64;
                let idf = kept.iter().map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0).collect();
                FittedFeaturizer::Tfidf {
                    vocabulary: kept.into_iter().map(|(t, _)| t).collect(),
                    idf,
                    sublinear_tf: params.boolean("sublinearTf", false),
                }
            }
        }
    })
}

fn l2_normalize(entries: &mut [(usize, f64)]) {
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in entries.iter_mut() {
            e.1 /= norm;
        }
    }
}

fn term_counts(text: &str, vocab: &HashMap<&str, usize>) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokenize(text) {
        if let Some(&j) = vocab.get(t.as_str()) {
            *counts.entry(j).or_default() += 1.0;
        }
    }
    counts.into_iter().collect()
}

impl FittedFeaturizer {
    pub fn width(&self) -> usize {
        match self {
            FittedFeaturizer::OneHot { categories } => categories.len(),
            FittedFeaturizer::MinMax { .. } | FittedFeaturizer::Std { .. } | FittedFeaturizer::Robust { .. } => 1,
            FittedFeaturizer::Hashing { n_features } => *n_features,
            FittedFeaturizer::Count { vocabulary } | FittedFeaturizer::Tfidf { vocabulary, .. } => {
                vocabulary.len()
            }
        }
    }

    pub fn transform(
        &self,
        name: &str,
        column: &ColumnValues,
        rows: &[usize],
    ) -> Result<FeatureMatrix, EvalError> {
        let scalar = |f: &dyn Fn(f64) -> f64, fill: f64| -> Result<FeatureMatrix, EvalError> {
            let cells = numeric_cells(column, name, rows)?;
            let data = cells.into_iter().map(|c| f(c.unwrap_or(fill))).collect();
            Ok(FeatureMatrix::Dense(DenseMatrix { rows: rows.len(), cols: 1, data }))
        };
        match self {
            FittedFeaturizer::OneHot { categories } => {
                let index: HashMap<&str, usize> =
                    categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
                let mut m = DenseMatrix::zeros(rows.len(), categories.len());
                for (i, &r) in rows.iter().enumerate() {
                    if let Some(&j) = index.get(column.token(r).as_str()) {
                        m.row_mut(i)[j] = 1.0;
                    }
                }
                Ok(FeatureMatrix::Dense(m))
            }
            FittedFeaturizer::MinMax { min, max, mean } => {
                let range = max - min;
                scalar(&|x| if range > 0.0 { (x - min) / range } else { 0.0 }, *mean)
            }
            FittedFeaturizer::Std { mean, std } => {
                scalar(&|x| if *std > 0.0 { (x - mean) / std } else { 0.0 }, *mean)
            }
            FittedFeaturizer::Robust { median, iqr, mean } => {
                scalar(&|x| if *iqr > 0.0 { (x - median) / iqr } else { 0.0 }, *mean)
            }
            FittedFeaturizer::Hashing { n_features } => {
                let mut m = SparseMatrix::empty(*n_features);
                for &r in rows {
                    let mut entries: Vec<(usize, f64)> = tokenize(&column.token(r))
                        .iter()
                        .map(|t| {
                            let h = fnv1a(t.as_bytes());
                            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                            ((h % *n_features as u64) as usize, sign)
                        })
                        .collect();
                    entries.sort_unstable_by_key(|e| e.0);
                    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                    for (j, v) in entries {
                        match merged.last_mut() {
                            Some(last) if last.0 == j => last.1 += v,
                            _ => merged.push((j, v)),
                        }
                    }
                    merged.retain(|e| e.1 != 0.0);
                    l2_normalize(&mut merged);
                    m.push_row(merged);
                }
                Ok(FeatureMatrix::Sparse(m))
            }
            FittedFeaturizer::Count { vocabulary } => {
                let vocab: HashMap<&str, usize> =
                    vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
                let mut m = SparseMatrix::empty(vocabulary.len());
                for &r in rows {
                    m.push_row(term_counts(&column.token(r), &vocab));
                }
                Ok(FeatureMatrix::Sparse(m))
            }
            FittedFeaturizer::Tfidf { vocabulary, idf, sublinear_tf } => {
                let vocab: HashMap<&str, usize> =
                    vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
                let mut m = SparseMatrix::empty(vocabulary.len());
                for &r in rows {
                    let mut entries = term_counts(&column.token(r), &vocab);
                    for e in entries.iter_mut() {
                        let tf = if *sublinear_tf { 1.0 + e.1.ln() } else { e.1 };
                        e.1 = tf * idf[e.0];
                    }
                    l2_normalize(&mut entries);
                    m.push_row(entries);
                }
                Ok(FeatureMatrix::Sparse(m))
            }
        }
    }
}

/// Column → (featurizer, params), in schema order.
pub type Assignments = Vec<(String, FeaturizerAlgorithm, ParamSet)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FittedColumn {
    pub column: String,
    pub algorithm: FeaturizerAlgorithm,
    pub state: FittedFeaturizer,
}

/// Fits every assigned featurizer on `rows` of `dataset`.
pub fn fit_all(
    dataset: &Dataset,
    assignments: &Assignments,
    rows: &[usize],
) -> Result<Vec<FittedColumn>, EvalError> {
    assignments
        .iter()
        .map(|(col, alg, params)| {
            let values = dataset
                .column(col)
                .ok_or_else(|| EvalError::SchemaMismatch(format!("unknown column {col}")))?;
            Ok(FittedColumn {
                column: col.clone(),
                algorithm: *alg,
                state: fit_featurizer(*alg, col, values, rows, params)?,
            })
        })
        .collect()
}

/// Transforms `rows` with fitted featurizers. The result is sparse iff every
/// block is sparse (text-only data).
pub fn transform_all(
    dataset: &Dataset,
    fitted: &[FittedColumn],
    rows: &[usize],
) -> Result<FeatureMatrix, EvalError> {
    let blocks = fitted
        .iter()
        .map(|f| {
            let values = dataset
                .column(&f.column)
                .ok_or_else(|| EvalError::SchemaMismatch(format!("missing column {}", f.column)))?;
            f.state.transform(&f.column, values, rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    FeatureMatrix::hstack(blocks).ok_or(EvalError::TooLarge("featurized matrix"))
}

/// Fits on every row and transforms every row.
pub fn featurize(dataset: &Dataset, assignments: &Assignments) -> Result<FeatureMatrix, EvalError> {
    let rows: Vec<usize> = (0..dataset.row_count).collect();
    let fitted = fit_all(dataset, assignments, &rows)?;
    transform_all(dataset, &fitted, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(values: &[&str]) -> ColumnValues {
        ColumnValues::Categorical(values.iter().map(|s| Some(s.to_string())).collect())
    }

    fn dense(m: FeatureMatrix) -> Vec<Vec<f64>> {
        let d = m.into_dense().unwrap();
        (0..d.rows).map(|i| d.row(i).to_vec()).collect()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn one_hot_uses_first_appearance_and_zeroes_unseen() {
        let col = cat(&["a", "b", "a"]);
        let f = fit_featurizer(FeaturizerAlgorithm::OneHot, "c", &col, &all(3), &ParamSet::new()).unwrap();
        assert_eq!(dense(f.transform("c", &col, &all(3)).unwrap()), vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let other = cat(&["z"]);
        assert_eq!(dense(f.transform("c", &other, &[0]).unwrap()), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn scalers() {
        let col = ColumnValues::Integer(vec![Some(0), Some(5), Some(10)]);
        let mm = fit_featurizer(FeaturizerAlgorithm::MinMaxScaler, "c", &col, &all(3), &ParamSet::new()).unwrap();
        assert_eq!(dense(mm.transform("c", &col, &all(3)).unwrap()), vec![vec![0.0], vec![0.5], vec![1.0]]);

        let std = fit_featurizer(FeaturizerAlgorithm::StdScaler, "c", &col, &all(3), &ParamSet::new()).unwrap();
        let z: Vec<f64> = dense(std.transform("c", &col, &all(3)).unwrap()).into_iter().map(|r| r[0]).collect();
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!((z.iter().map(|x| x * x).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);

        let constant = ColumnValues::Float(vec![Some(2.0); 4]);
        for alg in [FeaturizerAlgorithm::StdScaler, FeaturizerAlgorithm::RobustScaler, FeaturizerAlgorithm::MinMaxScaler] {
            let f = fit_featurizer(alg, "c", &constant, &all(4), &ParamSet::new()).unwrap();
            assert_eq!(dense(f.transform("c", &constant, &all(4)).unwrap()), vec![vec![0.0]; 4]);
        }

        let r = ColumnValues::Float(vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(100.0)]);
        let rb = fit_featurizer(FeaturizerAlgorithm::RobustScaler, "c", &r, &all(5), &ParamSet::new()).unwrap();
        assert_eq!(rb, FittedFeaturizer::Robust { median: 3.0, iqr: 2.0, mean: 22.0 });
    }

    #[test]
    fn missing_numeric_is_mean_imputed() {
        let col = ColumnValues::Float(vec![Some(0.0), None, Some(10.0)]);
        let mm = fit_featurizer(FeaturizerAlgorithm::MinMaxScaler, "c", &col, &all(3), &ParamSet::new()).unwrap();
        assert_eq!(dense(mm.transform("c", &col, &all(3)).unwrap())[1], vec![0.5]);
    }

    #[test]
    fn tfidf_matches_hand_computation() {
        let col = ColumnValues::Text(vec![Some("a b".into()), Some("b".into())]);
        let f = fit_featurizer(FeaturizerAlgorithm::TfidfVectorizer, "c", &col, &all(2), &ParamSet::new()).unwrap();
        // N=2: idf(a)=ln(3/2)+1, idf(b)=ln(3/3)+1=1
        let idf_a = (3.0f64 / 2.0).ln() + 1.0;
        let norm = (idf_a * idf_a + 1.0).sqrt();
        let got = dense(f.transform("c", &col, &all(2)).unwrap());
        let want = [vec![idf_a / norm, 1.0 / norm], vec![0.0, 1.0]];
        for (g, w) in got.iter().zip(&want) {
            for (x, y) in g.iter().zip(w) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn count_vectorizer_lowercases_unicode_words() {
        let col = ColumnValues::Text(vec![Some("Hello, hello WORLD".into()), Some("Grüße world".into())]);
        let f = fit_featurizer(FeaturizerAlgorithm::CountVectorizer, "c", &col, &all(2), &ParamSet::new()).unwrap();
        assert_eq!(f, FittedFeaturizer::Count { vocabulary: vec!["grüße".into(), "hello".into(), "world".into()] });
        assert_eq!(dense(f.transform("c", &col, &all(2)).unwrap()), vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 1.0]]);
        let empty = ColumnValues::Text(vec![Some("...".into()), Some("!!".into())]);
        assert!(matches!(
            fit_featurizer(FeaturizerAlgorithm::CountVectorizer, "c", &empty, &all(2), &ParamSet::new()),
            Err(EvalError::EmptyVocabulary(_))
        ));
    }

    #[test]
    fn hashing_is_signed_and_normalized() {
        let col = ColumnValues::Text(vec![Some("spam spam eggs".into())]);
        let f = fit_featurizer(FeaturizerAlgorithm::HashingVectorizer, "c", &col, &[0], &ParamSet::new()).unwrap();
        assert_eq!(f.width(), DEFAULT_HASH_FEATURES);
        let FeatureMatrix::Sparse(m) = f.transform("c", &col, &[0]).unwrap() else { panic!("sparse expected") };
        let norm: f64 = m.values.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(m.nnz() <= 2);
    }

    #[test]
    fn statistics_ignore_rows_outside_the_fit_split() {
        let col = ColumnValues::Float(vec![Some(1.0), Some(3.0), Some(1e6)]);
        let fit = fit_featurizer(FeaturizerAlgorithm::MinMaxScaler, "c", &col, &[0, 1], &ParamSet::new()).unwrap();
        assert_eq!(fit, FittedFeaturizer::MinMax { min: 1.0, max: 3.0, mean: 2.0 });
    }

    #[test]
    fn scaler_on_text_column_is_incompatible() {
        let col = cat(&["a", "b"]);
        assert!(matches!(
            fit_featurizer(FeaturizerAlgorithm::StdScaler, "c", &col, &all(2), &ParamSet::new()),
            Err(EvalError::Incompatible(_))
        ));
    }
}
