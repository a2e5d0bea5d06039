//! Whole-matrix preprocessors.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::codec;
use super::featurize::quantile;
use super::linalg::{self, rbf, sym_eigen_desc};
use super::matrix::{DenseMatrix, FeatureMatrix, SparseMatrix};
use super::params::ParamSet;
use super::EvalError;
use crate::types::PreprocessorAlgorithm;

/// Rows used to fit kernel PCA.
pub const KERNEL_PCA_MAX_BASIS: usize = 500;
/// Upper bound on components produced by projection preprocessors.
pub const MAX_COMPONENTS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTree {
    /// Internal nodes: (feature, threshold, left, right); leaves are encoded as
    /// `!leaf_index` in the child slots.
    pub feature: Vec<usize>,
    #[serde(with = "codec::f64s")]
    pub threshold: Vec<f64>,
    pub left: Vec<i64>,
    pub right: Vec<i64>,
    pub leaves: usize,
}

impl RandomTree {
    fn leaf(&self, x: &[f64]) -> usize {
        if self.feature.is_empty() {
            return 0;
        }
        let mut node = 0i64;
        loop {
            let n = node as usize;
            let next = if x[self.feature[n]] <= self.threshold[n] { self.left[n] } else { self.right[n] };
            if next < 0 {
                return (!next) as usize;
            }
            node = next;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedPreprocessor {
    Noop,
    /// x ↦ W(x − μ); μ absent means no centering.
    Projection {
        #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_f64s")]
        mean: Option<Vec<f64>>,
        components: DenseMatrix,
    },
    KernelPca {
        basis: DenseMatrix,
        gamma: f64,
        /// m×k, already divided by √λ.
        alphas: DenseMatrix,
        #[serde(with = "codec::f64s")]
        basis_col_means: Vec<f64>,
        basis_mean: f64,
    },
    RandomFourier {
        /// D×d
        weights: DenseMatrix,
        #[serde(with = "codec::f64s")]
        offsets: Vec<f64>,
    },
    Nystroem {
        basis: DenseMatrix,
        gamma: f64,
        normalization: DenseMatrix,
    },
    Select {
        columns: Vec<usize>,
        input_width: usize,
    },
    /// x ↦ (x − shift)·scale, column-wise.
    Affine {
        #[serde(with = "codec::f64s")]
        shift: Vec<f64>,
        #[serde(with = "codec::f64s")]
        scale: Vec<f64>,
    },
    TreesEmbedding {
        trees: Vec<RandomTree>,
    },
}

mod opt_f64s {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::evaluator::codec::f64s")] Vec<f64>);

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => Wrap(v.clone()).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

fn dense(x: &FeatureMatrix, who: PreprocessorAlgorithm) -> Result<DenseMatrix, EvalError> {
    x.try_to_dense().ok_or(EvalError::TooLarge(who.as_str()))
}

fn column_means(x: &DenseMatrix) -> Vec<f64> {
    let mut m = vec![0.0; x.cols];
    for i in 0..x.rows {
        for (a, v) in m.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    let n = x.rows.max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn centered(x: &DenseMatrix, mean: &[f64]) -> DenseMatrix {
    let mut c = x.clone();
    for i in 0..c.rows {
        for (v, m) in c.row_mut(i).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    c
}

fn n_components(fraction: f64, limit: usize) -> usize {
    ((fraction * limit as f64).ceil() as usize).clamp(1, limit.clamp(1, MAX_COMPONENTS))
}

/// Top principal axes (rows) of centered data.
fn principal_axes(c: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let d = c.cols;
    if d <= 400 {
        let a = linalg::to_na(c);
        let cov = a.transpose() * &a;
        let (_, vecs) = sym_eigen_desc(cov);
        let mut out = DenseMatrix::zeros(k, d);
        for r in 0..k {
            for j in 0..d {
                out.data[r * d + j] = vecs[(j, r)];
            }
        }
        out
    } else {
        linalg::randomized_right_singular(&FeatureMatrix::Dense(c.clone()), k, rng)
    }
}

/// One-way ANOVA F statistic per column.
pub fn anova_f(x: &FeatureMatrix, y: &[usize], n_classes: usize) -> Vec<f64> {
    let d = x.cols();
    let n = x.rows() as f64;
    let mut count = vec![0.0; n_classes];
    let mut sum = vec![vec![0.0; d]; n_classes];
    let mut sumsq = vec![0.0; d];
    for (i, &c) in y.iter().enumerate() {
        count[c] += 1.0;
        x.for_each_in_row(i, |j, v| {
            sum[c][j] += v;
            sumsq[j] += v * v;
        });
    }
    let k = count.iter().filter(|c| **c > 0.0).count() as f64;
    (0..d)
        .map(|j| {
            let total: f64 = (0..n_classes).map(|c| sum[c][j]).sum();
            let grand = total / n;
            let ssb: f64 = (0..n_classes)
                .filter(|&c| count[c] > 0.0)
                .map(|c| {
                    let m = sum[c][j] / count[c];
                    count[c] * (m - grand) * (m - grand)
                })
                .sum();
            let ssw = (sumsq[j] - total * grand - ssb).max(0.0);
            if k < 2.0 || n <= k {
                0.0
            } else if ssw <= 1e-12 * sumsq[j].max(1.0) {
                if ssb > 0.0 { f64::MAX } else { 0.0 }
            } else {
                (ssb / (k - 1.0)) / (ssw / (n - k))
            }
        })
        .collect()
}

fn top_columns(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut cols: Vec<usize> = order.into_iter().take(k.max(1).min(scores.len())).collect();
    cols.sort_unstable();
    cols
}

fn affine_from_columns(
    x: &DenseMatrix,
    stat: impl Fn(&mut Vec<f64>) -> (f64, f64),
) -> FittedPreprocessor {
    let mut shift = Vec::with_capacity(x.cols);
    let mut scale = Vec::with_capacity(x.cols);
    for j in 0..x.cols {
        let mut col = x.column(j);
        let (s, spread) = stat(&mut col);
        shift.push(s);
        scale.push(if spread > 0.0 && spread.is_finite() { 1.0 / spread } else { 1.0 });
    }
    FittedPreprocessor::Affine { shift, scale }
}

fn grow_random_tree(x: &DenseMatrix, rows: Vec<usize>, max_depth: usize, rng: &mut ChaCha8Rng) -> RandomTree {
    let mut t = RandomTree { feature: vec![], threshold: vec![], left: vec![], right: vec![], leaves: 0 };
    // (rows, depth, parent slot)
    let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(rows, 0, None)];
    while let Some((rows, depth, parent)) = stack.pop() {
        let mut split = None;
        if depth < max_depth && rows.len() >= 2 {
            let mut features: Vec<usize> = (0..x.cols).collect();
            while !features.is_empty() {
                let f = features.swap_remove(rng.random_range(0..features.len()));
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = x.get(r, f);
                    (lo.min(v), hi.max(v))
                });
                if hi > lo {
                    let th = rng.random_range(lo..hi);
                    split = Some((f, th));
                    break;
                }
            }
        }
        let slot = match split {
            Some((f, th)) => {
                let id = t.feature.len();
                t.feature.push(f);
                t.threshold.push(th);
                t.left.push(0);
                t.right.push(0);
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= th);
                stack.push((r, depth + 1, Some((id, false))));
                stack.push((l, depth + 1, Some((id, true))));
                id as i64
            }
            None => {
                t.leaves += 1;
                !((t.leaves - 1) as i64)
            }
        };
        if let Some((p, is_left)) = parent {
            if is_left { t.left[p] = slot } else { t.right[p] = slot }
        }
    }
    t
}

pub fn fit_preprocessor(
    algorithm: PreprocessorAlgorithm,
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    params: &ParamSet,
    seed: u64,
) -> Result<FittedPreprocessor, EvalError> {
    use PreprocessorAlgorithm as P;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (x.rows(), x.cols());
    Ok(match algorithm {
        P::Noop => FittedPreprocessor::Noop,
        P::Pca => {
            let xd = dense(x, algorithm)?;
            let mean = column_means(&xd);
            let k = n_components(params.real("componentFraction", 0.5), n.min(d));
            let components = principal_axes(&centered(&xd, &mean), k, &mut rng);
            FittedPreprocessor::Projection { mean: Some(mean), components }
        }
        P::TruncatedSvd => {
            let k = n_components(params.real("componentFraction", 0.5), n.min(d));
            FittedPreprocessor::Projection {
                mean: None,
                components: linalg::randomized_right_singular(x, k, &mut rng),
            }
        }
        P::FastIca => {
            let xd = dense(x, algorithm)?;
            let mean = column_means(&xd);
            let k = n_components(params.real("componentFraction", 0.5), n.min(d));
            let c = centered(&xd, &mean);
            let axes = principal_axes(&c, k, &mut rng);
            // whitening: project on axes, scale to unit variance
            let z = linalg::mul(&FeatureMatrix::Dense(c.clone()), &linalg::to_na(&axes).transpose());
            let mut white = linalg::to_na(&axes);
            let mut zs = z.clone();
            for r in 0..k {
                let sd = (z.column(r).map(|v| v * v).sum() / n.max(1) as f64).sqrt();
                let s = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
                white.row_mut(r).scale_mut(s);
                zs.column_mut(r).scale_mut(s);
            }
            let w = fast_ica(&zs, &mut rng)?;
            FittedPreprocessor::Projection { mean: Some(mean), components: linalg::from_na(&(w * white)) }
        }
        P::KernelPca => {
            let xd = dense(x, algorithm)?;
            let gamma = params.real("gamma", 1.0 / d.max(1) as f64);
            let m = n.min(KERNEL_PCA_MAX_BASIS);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            let basis = xd.select_rows(&idx);
            let mut kmat = DMatrix::from_fn(m, m, |i, j| rbf(basis.row(i), basis.row(j), gamma));
            let col_means: Vec<f64> = (0..m).map(|j| kmat.column(j).sum() / m as f64).collect();
            let all_mean = col_means.iter().sum::<f64>() / m as f64;
            for i in 0..m {
                for j in 0..m {
                    kmat[(i, j)] += all_mean - col_means[i] - col_means[j];
                }
            }
            let (vals, vecs) = sym_eigen_desc(kmat);
            let k = n_components(params.real("componentFraction", 0.5), d.min(m));
            let k = vals.iter().take(k).filter(|v| **v > 1e-10).count().max(1);
            let mut alphas = DenseMatrix::zeros(m, k);
            for c in 0..k {
                let s = 1.0 / vals[c].max(1e-10).sqrt();
                for i in 0..m {
                    alphas.data[i * k + c] = vecs[(i, c)] * s;
                }
            }
            FittedPreprocessor::KernelPca { basis, gamma, alphas, basis_col_means: col_means, basis_mean: all_mean }
        }
        P::RbfSampler => {
            let gamma = params.real("gamma", 1.0 / d.max(1) as f64);
            let big_d = params.int("components", 100).max(1) as usize;
            let sd = (2.0 * gamma).sqrt();
            let weights = DenseMatrix {
                rows: big_d,
                cols: d,
                data: (0..big_d * d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
            };
            let offsets = (0..big_d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            FittedPreprocessor::RandomFourier { weights, offsets }
        }
        P::Nystroem => {
            let xd = dense(x, algorithm)?;
            let gamma = params.real("gamma", 1.0 / d.max(1) as f64);
            let m = (params.int("components", 100).max(1) as usize).min(n);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            let basis = xd.select_rows(&idx);
            let kmat = DMatrix::from_fn(m, m, |i, j| rbf(basis.row(i), basis.row(j), gamma));
            let (vals, vecs) = sym_eigen_desc(kmat);
            let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                m,
                vals.iter().map(|v| 1.0 / v.max(1e-12).sqrt()),
            ));
            let normalization = &vecs * inv_sqrt * vecs.transpose();
            FittedPreprocessor::Nystroem { basis, gamma, normalization: linalg::from_na(&normalization) }
        }
        P::SelectKBest | P::SelectPercentile => {
            let scores = anova_f(x, y, n_classes);
            let k = if algorithm == P::SelectKBest {
                (params.real("kFraction", 0.5) * d as f64).round() as usize
            } else {
                (params.real("percentile", 50.0) / 100.0 * d as f64).ceil() as usize
            };
            FittedPreprocessor::Select { columns: top_columns(&scores, k), input_width: d }
        }
        P::MinMaxScaler => affine_from_columns(&dense(x, algorithm)?, |c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        }),
        P::StdScaler => affine_from_columns(&dense(x, algorithm)?, |c| {
            let m = c.iter().sum::<f64>() / c.len().max(1) as f64;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len().max(1) as f64;
            (m, var.sqrt())
        }),
        P::RobustScaler => affine_from_columns(&dense(x, algorithm)?, |c| {
            c.sort_by(f64::total_cmp);
            (quantile(c, 0.5), quantile(c, 0.75) - quantile(c, 0.25))
        }),
        P::AbsScaler => {
            let mut max_abs = vec![0.0f64; d];
            for i in 0..n {
                x.for_each_in_row(i, |j, v| max_abs[j] = max_abs[j].max(v.abs()));
            }
            FittedPreprocessor::Affine {
                shift: vec![0.0; d],
                scale: max_abs.into_iter().map(|m| if m > 0.0 { 1.0 / m } else { 1.0 }).collect(),
            }
        }
        P::RandomTreesEmbedding => {
            let xd = dense(x, algorithm)?;
            let trees = params.int("trees", 10).max(1) as usize;
            let depth = params.int("maxDepth", 5).max(1) as usize;
            let trees = (0..trees)
                .map(|_| grow_random_tree(&xd, (0..n).collect(), depth, &mut rng))
                .collect();
            FittedPreprocessor::TreesEmbedding { trees }
        }
    })
}

/// Symmetric FastICA with the log-cosh contrast on whitened data (n×k).
fn fast_ica(z: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>, EvalError> {
    let (n, k) = (z.nrows(), z.ncols());
    let decorrelate = |w: DMatrix<f64>| -> DMatrix<f64> {
        let (vals, vecs) = sym_eigen_desc(&w * w.transpose());
        let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            k,
            vals.iter().map(|v| 1.0 / v.max(1e-12).sqrt()),
        ));
        &vecs * inv * vecs.transpose() * w
    };
    let mut w = decorrelate(DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal)));
    for _ in 0..200 {
        let wz = z * w.transpose(); // n×k
        let g = wz.map(f64::tanh);
        let g_prime_mean: Vec<f64> =
            (0..k).map(|c| g.column(c).iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64).collect();
        let mut next = g.transpose() * z / n as f64;
        for c in 0..k {
            let row = w.row(c) * g_prime_mean[c];
            let mut target = next.row_mut(c);
            target -= row;
        }
        let next = decorrelate(next);
        let lim = (0..k)
            .map(|c| (next.row(c).dot(&w.row(c)).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(EvalError::Diverged("fastICA".into()));
        }
        if lim < 1e-4 {
            break;
        }
    }
    Ok(w)
}

impl FittedPreprocessor {
    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, EvalError> {
        let n = x.rows();
        Ok(match self {
            FittedPreprocessor::Noop => x.clone(),
            FittedPreprocessor::Projection { mean, components } => {
                let w = linalg::to_na(components).transpose();
                let mut out = linalg::mul(x, &w);
                if let Some(mu) = mean {
                    let shift = nalgebra::RowDVector::from_iterator(
                        components.rows,
                        (0..components.rows).map(|r| {
                            components.row(r).iter().zip(mu).map(|(a, b)| a * b).sum::<f64>()
                        }),
                    );
                    for i in 0..n {
                        let mut row = out.row_mut(i);
                        row -= &shift;
                    }
                }
                FeatureMatrix::Dense(linalg::from_na(&out))
            }
            FittedPreprocessor::KernelPca { basis, gamma, alphas, basis_col_means, basis_mean } => {
                let xd = x.try_to_dense().ok_or(EvalError::TooLarge("kernelPCA"))?;
                let (m, k) = (basis.rows, alphas.cols);
                let mut out = DenseMatrix::zeros(n, k);
                let mut kv = vec![0.0; m];
                for i in 0..n {
                    for (j, slot) in kv.iter_mut().enumerate() {
                        *slot = rbf(xd.row(i), basis.row(j), *gamma);
                    }
                    let row_mean = kv.iter().sum::<f64>() / m as f64;
                    let row = out.row_mut(i);
                    for (j, kij) in kv.iter().enumerate() {
                        let c = kij - basis_col_means[j] - row_mean + basis_mean;
                        for (o, a) in row.iter_mut().zip(alphas.row(j)) {
                            *o += c * a;
                        }
                    }
                }
                FeatureMatrix::Dense(out)
            }
            FittedPreprocessor::RandomFourier { weights, offsets } => {
                let proj = linalg::mul(x, &linalg::to_na(weights).transpose());
                let scale = (2.0 / offsets.len() as f64).sqrt();
                let mut out = DenseMatrix::zeros(n, offsets.len());
                for i in 0..n {
                    for (c, b) in offsets.iter().enumerate() {
                        out.data[i * offsets.len() + c] = scale * (proj[(i, c)] + b).cos();
                    }
                }
                FeatureMatrix::Dense(out)
            }
            FittedPreprocessor::Nystroem { basis, gamma, normalization } => {
                let xd = x.try_to_dense().ok_or(EvalError::TooLarge("nystroem"))?;
                let kx = DMatrix::from_fn(n, basis.rows, |i, j| rbf(xd.row(i), basis.row(j), *gamma));
                FeatureMatrix::Dense(linalg::from_na(&(kx * linalg::to_na(normalization))))
            }
            FittedPreprocessor::Select { columns, input_width } => {
                if x.cols() != *input_width {
                    return Err(EvalError::SchemaMismatch(format!(
                        "selector fitted on {input_width} columns, got {}",
                        x.cols()
                    )));
                }
                x.select_columns(columns)
            }
            FittedPreprocessor::Affine { shift, scale } => match x {
                FeatureMatrix::Sparse(m) if shift.iter().all(|s| *s == 0.0) => {
                    let mut out = m.clone();
                    for (v, j) in out.values.iter_mut().zip(&m.indices) {
                        *v *= scale[*j];
                    }
                    FeatureMatrix::Sparse(out)
                }
                _ => {
                    let mut d = x.try_to_dense().ok_or(EvalError::TooLarge("scaler"))?;
                    for i in 0..d.rows {
                        for ((v, s), c) in d.row_mut(i).iter_mut().zip(shift).zip(scale) {
                            *v = (*v - s) * c;
                        }
                    }
                    FeatureMatrix::Dense(d)
                }
            },
            FittedPreprocessor::TreesEmbedding { trees } => {
                let xd = x.try_to_dense().ok_or(EvalError::TooLarge("random_trees_embedding"))?;
                let width: usize = trees.iter().map(|t| t.leaves).sum();
                let mut out = SparseMatrix::empty(width);
                for i in 0..n {
                    let mut offset = 0;
                    let mut entries = Vec::with_capacity(trees.len());
                    for t in trees {
                        entries.push((offset + t.leaf(xd.row(i)), 1.0));
                        offset += t.leaves;
                    }
                    out.push_row(entries);
                }
                FeatureMatrix::Sparse(out)
            }
        })
    }
}
