//! Histogram-binned decision trees: random forests (Gini) and gradient
//! boosting (Newton leaves on log-loss).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluator::codec;
use crate::evaluator::matrix::FeatureMatrix;
use crate::seed;

/// Bins per feature; codes fit in a `u8`.
pub const MAX_BINS: usize = 256;
const LEAF: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Encoded root: a node index, or `LEAF | leaf index`.
    pub root: usize,
    #[serde(with = "codec::indices")]
    pub feature: Vec<usize>,
    #[serde(with = "codec::f64s")]
    pub threshold: Vec<f64>,
    #[serde(with = "codec::indices")]
    pub left: Vec<usize>,
    #[serde(with = "codec::indices")]
    pub right: Vec<usize>,
    /// Values per leaf.
    pub width: usize,
    #[serde(with = "codec::f64s")]
    pub values: Vec<f64>,
}

pub fn value_at(x: &FeatureMatrix, i: usize, j: usize) -> f64 {
    match x {
        FeatureMatrix::Dense(d) => d.get(i, j),
        FeatureMatrix::Sparse(s) => {
            let (idx, vals) = s.row(i);
            idx.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
        }
    }
}

impl Tree {
    pub fn leaf_values(&self, x: &FeatureMatrix, i: usize) -> &[f64] {
        let mut node = self.root;
        while node & LEAF == 0 {
            node = if value_at(x, i, self.feature[node]) <= self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            };
        }
        let leaf = node & !LEAF;
        &self.values[leaf * self.width..(leaf + 1) * self.width]
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }
}

enum BinnedColumn {
    Dense(Vec<u8>),
    /// Rows with a non-zero value, sorted, and their codes.
    Sparse { zero: u8, rows: Vec<u32>, codes: Vec<u8> },
}

impl BinnedColumn {
    fn code(&self, i: usize) -> u8 {
        match self {
            BinnedColumn::Dense(c) => c[i],
            BinnedColumn::Sparse { zero, rows, codes } => {
                rows.binary_search(&(i as u32)).map(|k| codes[k]).unwrap_or(*zero)
            }
        }
    }
}

/// Non-constant features of a training matrix, quantized.
pub struct Binned {
    n: usize,
    features: Vec<usize>,
    thresholds: Vec<Vec<f64>>,
    columns: Vec<BinnedColumn>,
}

/// Split points such that `v <= t` goes left; empty for constant columns.
fn bin_thresholds(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut unique = values.clone();
    unique.dedup();
    if unique.len() <= 1 {
        return Vec::new();
    }
    if unique.len() <= MAX_BINS {
        return unique.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    }
    let n = values.len();
    let mut cuts: Vec<f64> = (1..MAX_BINS).map(|k| values[k * n / MAX_BINS]).collect();
    cuts.dedup();
    if cuts.last() == unique.last() {
        cuts.pop();
    }
    cuts
}

fn code_of(thresholds: &[f64], v: f64) -> u8 {
    thresholds.partition_point(|&t| t < v) as u8
}

impl Binned {
    pub fn new(x: &FeatureMatrix) -> Binned {
        let n = x.rows();
        let mut out = Binned { n, features: Vec::new(), thresholds: Vec::new(), columns: Vec::new() };
        match x {
            FeatureMatrix::Dense(d) => {
                for j in 0..d.cols {
                    let col = d.column(j);
                    let t = bin_thresholds(col.clone());
                    if t.is_empty() {
                        continue;
                    }
                    let codes = col.iter().map(|&v| code_of(&t, v)).collect();
                    out.push(j, t, BinnedColumn::Dense(codes));
                }
            }
            FeatureMatrix::Sparse(s) => {
                let mut per_col: Vec<Vec<(u32, f64)>> = vec![Vec::new(); s.cols];
                for i in 0..n {
                    let (idx, vals) = s.row(i);
                    for (&j, &v) in idx.iter().zip(vals) {
                        per_col[j].push((i as u32, v));
                    }
                }
                for (j, entries) in per_col.into_iter().enumerate() {
                    if entries.is_empty() {
                        continue;
                    }
                    let mut all: Vec<f64> = entries.iter().map(|e| e.1).collect();
                    all.resize(n, 0.0);
                    let t = bin_thresholds(all);
                    if t.is_empty() {
                        continue;
                    }
                    let column = BinnedColumn::Sparse {
                        zero: code_of(&t, 0.0),
                        rows: entries.iter().map(|e| e.0).collect(),
                        codes: entries.iter().map(|e| code_of(&t, e.1)).collect(),
                    };
                    out.push(j, t, column);
                }
            }
        }
        out
    }

    fn push(&mut self, feature: usize, thresholds: Vec<f64>, column: BinnedColumn) {
        self.features.push(feature);
        self.thresholds.push(thresholds);
        self.columns.push(column);
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }
}

/// Per-sample statistics and how splits are scored.
#[derive(Clone, Copy)]
pub enum Objective {
    /// Stats are weighted one-hot class counts.
    Gini,
    /// Stats are (gradient, 1, hessian); the split score is Friedman's.
    Newton,
}

impl Objective {
    fn score(self, s: &[f64]) -> f64 {
        match self {
            Objective::Gini => {
                let w: f64 = s.iter().sum();
                if w <= 0.0 {
                    0.0
                } else {
                    s.iter().map(|c| c * c).sum::<f64>() / w
                }
            }
            Objective::Newton => {
                if s[1] <= 0.0 {
                    0.0
                } else {
                    s[0] * s[0] / s[1]
                }
            }
        }
    }

    fn is_pure(self, s: &[f64]) -> bool {
        match self {
            Objective::Gini => {
                let w: f64 = s.iter().sum();
                s.iter().any(|&c| c >= w * (1.0 - 1e-12))
            }
            Objective::Newton => false,
        }
    }

    fn leaf(self, s: &[f64]) -> Vec<f64> {
        match self {
            Objective::Gini => {
                let w: f64 = s.iter().sum();
                s.iter().map(|c| c / w).collect()
            }
            Objective::Newton => {
                vec![if s[2].abs() < 1e-150 { 0.0 } else { s[0] / s[2] }]
            }
        }
    }
}

pub struct Grower<'a> {
    pub data: &'a Binned,
    pub objective: Objective,
    pub width: usize,
    /// n × width, row-major.
    pub stats: &'a [f64],
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features examined per node; `None` examines all.
    pub mtry: Option<usize>,
}

struct Work {
    lo: usize,
    hi: usize,
    depth: usize,
    id: u32,
    attach: Option<(usize, bool)>,
}

struct Split {
    gain: f64,
    feature: usize,
    bin: u8,
}

impl Grower<'_> {
    pub fn grow(&self, mut samples: Vec<u32>, rng: &mut ChaCha8Rng) -> Tree {
        let w = self.width;
        let mut tree = Tree {
            root: LEAF,
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            width: self.objective.leaf(&vec![1.0; w]).len(),
            values: Vec::new(),
        };
        let mut node_of = vec![u32::MAX; self.data.n];
        for &i in &samples {
            node_of[i as usize] = 0;
        }
        let mut next_id = 1u32;
        let mut order: Vec<usize> = (0..self.data.n_features()).collect();
        let mut hist = vec![0.0; MAX_BINS * w];
        let mut count = vec![0usize; MAX_BINS];
        let mut stack = vec![Work { lo: 0, hi: samples.len(), depth: 0, id: 0, attach: None }];
        while let Some(work) = stack.pop() {
            let range = &samples[work.lo..work.hi];
            let mut total = vec![0.0; w];
            for &i in range {
                let s = &self.stats[i as usize * w..(i as usize + 1) * w];
                total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
            }
            let can_split = range.len() >= self.min_samples_split.max(2)
                && self.max_depth.is_none_or(|d| work.depth < d)
                && !self.objective.is_pure(&total);
            let split = if can_split {
                self.best_split(range, work.id, &total, &node_of, &mut order, &mut hist, &mut count, rng)
            } else {
                None
            };
            let encoded = match split {
                None => {
                    let leaf = tree.values.len() / tree.width;
                    tree.values.extend(self.objective.leaf(&total));
                    LEAF | leaf
                }
                Some(split) => {
                    let node = tree.feature.len();
                    let column = &self.data.columns[split.feature];
                    tree.feature.push(self.data.features[split.feature]);
                    tree.threshold.push(self.data.thresholds[split.feature][split.bin as usize]);
                    tree.left.push(LEAF);
                    tree.right.push(LEAF);
                    let slice = &mut samples[work.lo..work.hi];
                    let mut mid = 0;
                    for k in 0..slice.len() {
                        if column.code(slice[k] as usize) <= split.bin {
                            slice.swap(mid, k);
                            mid += 1;
                        }
                    }
                    let (left_id, right_id) = (next_id, next_id + 1);
                    next_id += 2;
                    for (k, &i) in slice.iter().enumerate() {
                        node_of[i as usize] = if k < mid { left_id } else { right_id };
                    }
                    let depth = work.depth + 1;
                    stack.push(Work { lo: work.lo + mid, hi: work.hi, depth, id: right_id, attach: Some((node, false)) });
                    stack.push(Work { lo: work.lo, hi: work.lo + mid, depth, id: left_id, attach: Some((node, true)) });
                    node
                }
            };
            match work.attach {
                None => tree.root = encoded,
                Some((parent, true)) => tree.left[parent] = encoded,
                Some((parent, false)) => tree.right[parent] = encoded,
            }
        }
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn best_split(
        &self,
        range: &[u32],
        id: u32,
        total: &[f64],
        node_of: &[u32],
        order: &mut [usize],
        hist: &mut [f64],
        count: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Option<Split> {
        let w = self.width;
        let parent = self.objective.score(total);
        let want = self.mtry.unwrap_or(order.len());
        let mut visited = 0;
        let mut best: Option<Split> = None;
        let mut left = vec![0.0; w];
        let mut right = vec![0.0; w];
        for k in 0..order.len() {
            if visited >= want {
                break;
            }
            if self.mtry.is_some() {
                let j = rng.random_range(k..order.len());
                order.swap(k, j);
            }
            let f = order[k];
            let nbins = self.data.thresholds[f].len() + 1;
            hist[..nbins * w].fill(0.0);
            count[..nbins].fill(0);
            match &self.data.columns[f] {
                BinnedColumn::Dense(codes) => {
                    for &i in range {
                        let b = codes[i as usize] as usize;
                        count[b] += 1;
                        let s = &self.stats[i as usize * w..(i as usize + 1) * w];
                        hist[b * w..(b + 1) * w].iter_mut().zip(s).for_each(|(h, v)| *h += v);
                    }
                }
                BinnedColumn::Sparse { zero, rows, codes } => {
                    let z = *zero as usize;
                    count[z] = range.len();
                    hist[z * w..(z + 1) * w].copy_from_slice(total);
                    for (&r, &c) in rows.iter().zip(codes) {
                        if node_of[r as usize] != id {
                            continue;
                        }
                        let b = c as usize;
                        count[z] -= 1;
                        count[b] += 1;
                        for t in 0..w {
                            let v = self.stats[r as usize * w + t];
                            hist[z * w + t] -= v;
                            hist[b * w + t] += v;
                        }
                    }
                }
            }
            if count[..nbins].iter().filter(|&&c| c > 0).count() < 2 {
                continue;
            }
            visited += 1;
            left.fill(0.0);
            let mut left_count = 0;
            for b in 0..nbins - 1 {
                if count[b] == 0 {
                    continue;
                }
                left_count += count[b];
                if left_count == range.len() {
                    break;
                }
                left.iter_mut().zip(&hist[b * w..(b + 1) * w]).for_each(|(l, h)| *l += h);
                right.iter_mut().zip(total.iter().zip(&left)).for_each(|(r, (t, l))| *r = t - l);
                let gain = self.objective.score(&left) + self.objective.score(&right) - parent;
                if best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(Split { gain, feature: f, bin: b as u8 });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

pub struct ForestParams {
    pub trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl RandomForest {
    pub fn fit(x: &FeatureMatrix, y: &[usize], k: usize, params: &ForestParams, seed: u64) -> RandomForest {
        let n = x.rows();
        let data = Binned::new(x);
        let mtry = ((x.cols() as f64).sqrt().floor() as usize).max(1);
        let mut trees = Vec::with_capacity(params.trees);
        for t in 0..params.trees {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &format!("tree-{t}")));
            let mut weight = vec![0.0; n];
            for _ in 0..n {
                weight[rng.random_range(0..n)] += 1.0;
            }
            let mut stats = vec![0.0; n * k];
            let mut samples = Vec::new();
            for i in 0..n {
                if weight[i] > 0.0 {
                    stats[i * k + y[i]] = weight[i];
                    samples.push(i as u32);
                }
            }
            let grower = Grower {
                data: &data,
                objective: Objective::Gini,
                width: k,
                stats: &stats,
                max_depth: params.max_depth,
                min_samples_split: params.min_samples_split,
                mtry: Some(mtry),
            };
            trees.push(grower.grow(samples, &mut rng));
        }
        RandomForest { n_classes: k, trees }
    }

    pub fn proba(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            p.iter_mut().zip(t.leaf_values(x, i)).for_each(|(a, v)| *a += v);
        }
        let m = self.trees.len().max(1) as f64;
        p.iter_mut().for_each(|a| *a /= m);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub n_classes: usize,
    /// Initial raw scores, one per output.
    pub init: Vec<f64>,
    /// Stage-major; each stage holds one tree per output.
    pub trees: Vec<Tree>,
}

pub struct BoostingParams {
    pub learning_rate: f64,
    pub stages: usize,
    pub max_depth: usize,
}

impl GradientBoosting {
    fn outputs(k: usize) -> usize {
        if k == 2 {
            1
        } else {
            k
        }
    }

    pub fn fit(x: &FeatureMatrix, y: &[usize], k: usize, params: &BoostingParams, seed: u64) -> GradientBoosting {
        let n = x.rows();
        let outs = Self::outputs(k);
        let data = Binned::new(x);
        let mut prior = vec![0.0; k];
        y.iter().for_each(|&c| prior[c] += 1.0 / n as f64);
        let init: Vec<f64> = if outs == 1 {
            let p1 = prior[1].clamp(1e-12, 1.0 - 1e-12);
            vec![(p1 / (1.0 - p1)).ln()]
        } else {
            prior.iter().map(|p| p.max(1e-12).ln()).collect()
        };
        let factor = if outs == 1 { 1.0 } else { (k as f64 - 1.0) / k as f64 };
        let mut raw: Vec<f64> = (0..n).flat_map(|_| init.clone()).collect();
        let mut model = GradientBoosting { n_classes: k, init, trees: Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<u32> = (0..n as u32).collect();
        let mut stats = vec![0.0; n * 3];
        for _ in 0..params.stages {
            let probs: Vec<Vec<f64>> = (0..n).map(|i| probabilities(&raw[i * outs..(i + 1) * outs])).collect();
            let mut stage = Vec::with_capacity(outs);
            for o in 0..outs {
                let class = if outs == 1 { 1 } else { o };
                for i in 0..n {
                    let p = probs[i][class];
                    let target = if y[i] == class { 1.0 } else { 0.0 };
                    stats[i * 3] = target - p;
                    stats[i * 3 + 1] = 1.0;
                    stats[i * 3 + 2] = p * (1.0 - p);
                }
                let grower = Grower {
                    data: &data,
                    objective: Objective::Newton,
                    width: 3,
                    stats: &stats,
                    max_depth: Some(params.max_depth),
                    min_samples_split: 2,
                    mtry: None,
                };
                let mut tree = grower.grow(samples.clone(), &mut rng);
                tree.values.iter_mut().for_each(|v| *v *= params.learning_rate * factor);
                stage.push(tree);
            }
            for i in 0..n {
                for (o, tree) in stage.iter().enumerate() {
                    raw[i * outs + o] += tree.leaf_values(x, i)[0];
                }
            }
            model.trees.extend(stage);
        }
        model
    }

    pub fn raw(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        let mut raw = self.init.clone();
        let outs = raw.len();
        for (t, tree) in self.trees.iter().enumerate() {
            raw[t % outs] += tree.leaf_values(x, i)[0];
        }
        raw
    }

    pub fn proba(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        probabilities(&self.raw(x, i))
    }
}

/// Sigmoid for a single output, softmax otherwise.
fn probabilities(raw: &[f64]) -> Vec<f64> {
    if raw.len() == 1 {
        let p = super::linear::sigmoid(raw[0]);
        vec![1.0 - p, p]
    } else {
        super::bayes::softmax(raw.to_vec())
    }
}
