//! CART trees and random forests for classification.
//!
//! Trees split on `x[feature] <= threshold` with thresholds at midpoints of
//! consecutive distinct values, chosen by weighted Gini decrease. Split
//! scores are compared as exact rationals, so equal-quality candidates are
//! ordered by (feature index, threshold) rather than by rounding noise.
//!
//! Each tree draws from its own ChaCha stream keyed by `(seed, tree index)`;
//! trees are grown in parallel and gathered in index order, so a fitted model
//! is bit-identical for any worker count.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{registry, N_FEATURES, REGISTRY_VERSION};
use crate::seed::stream_rng;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("mtry {mtry} outside 1..={n_features}")]
    MtryOutOfRange { mtry: usize, n_features: usize },
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0}")]
    InvalidInput(String),
    #[error("node is empty")]
    EmptyNode,
    #[error("model carries no in-bag record (loaded from disk?)")]
    NoInBagRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features sampled (without replacement) at every node.
    pub mtry: usize,
    /// Nodes with at most this many samples become leaves.
    pub min_node_size: usize,
    /// Per-class draw counts, in ascending class-id order.
    pub sampsize: Option<Vec<usize>>,
    pub seed: u64,
    /// Draw with replacement; without it every sample (or `sampsize` per
    /// class, drawn without replacement) is used once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: 19,
            min_node_size: 1,
            sampsize: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    /// A single fully grown CART tree on all samples and features.
    pub fn single_tree(n_features: usize) -> Self {
        ForestParams {
            n_trees: 1,
            mtry: n_features,
            bootstrap: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: usize,
        #[serde(rename = "r")]
        right: usize,
    },
    Leaf {
        #[serde(rename = "leaf")]
        class: u32,
        /// Training samples (with bootstrap multiplicity) that reached it.
        n: usize,
    },
}

/// Node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf node `row` lands in.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> u32 {
        match self.nodes[self.leaf_of(row)] {
            Node::Leaf { class, .. } => class,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    /// Class ids in ascending order.
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub registry_version: String,
    pub trees: Vec<Tree>,
    /// Total weighted Gini decrease per feature, summed over all trees.
    pub importance: Vec<f64>,
    /// Draw count of every training sample in every tree (`n_trees x n`).
    #[serde(skip)]
    pub inbag: Vec<Vec<u32>>,
}

pub fn gini_impurity(class_counts: &[usize]) -> Result<f64, ForestError> {
    let n: usize = class_counts.iter().sum();
    if n == 0 {
        return Err(ForestError::EmptyNode);
    }
    let n = n as f64;
    Ok(1.0 - class_counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Caps every class at `ratio` times the smallest class.
pub fn stratified_sampsize(class_counts: &[usize], ratio: f64) -> Result<Vec<usize>, ForestError> {
    if class_counts.len() < 2 || class_counts.contains(&0) {
        return Err(ForestError::InvalidInput(
            "stratified sampling needs at least two non-empty classes".into(),
        ));
    }
    if !(ratio >= 1.0) {
        return Err(ForestError::InvalidInput(format!("ratio {ratio} must be >= 1")));
    }
    let smallest = *class_counts.iter().min().expect("non-empty");
    let cap = (ratio * smallest as f64).floor() as usize;
    Ok(class_counts.iter().map(|&c| c.min(cap)).collect())
}

/// Sorted distinct class ids of `y`.
pub fn class_list(y: &[u32]) -> Vec<u32> {
    let mut c = y.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Per-class counts of `y` in `class_list(y)` order.
pub fn class_counts(y: &[u32]) -> Vec<usize> {
    let classes = class_list(y);
    let mut counts = vec![0; classes.len()];
    for v in y {
        counts[classes.binary_search(v).expect("listed")] += 1;
    }
    counts
}

/// A split candidate scored by `sum_L c^2 / n_L + sum_R c^2 / n_R`, held as
/// the exact fraction `num / den`. Larger is better.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    num: u128,
    den: u128,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        let lhs = self.num * other.den;
        let rhs = other.num * self.den;
        lhs > rhs
            || (lhs == rhs
                && (self.feature < other.feature
                    || (self.feature == other.feature && self.threshold < other.threshold)))
    }
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    min_node_size: usize,
    importance: Vec<f64>,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

impl TreeBuilder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &s in samples {
            c[self.y[s]] += 1;
        }
        c
    }

    fn best_split(&mut self, samples: &[usize], features: &[usize]) -> Option<Candidate> {
        let m = samples.len();
        let mut best: Option<Candidate> = None;
        let mut left = vec![0u64; self.n_classes];
        let mut right = vec![0u64; self.n_classes];
        for &f in features {
            let col = &self.columns[f];
            self.scratch.clear();
            self.scratch.extend(samples.iter().map(|&s| (col[s], self.y[s])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[m - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0);
            right.iter_mut().for_each(|c| *c = 0);
            for &(_, c) in &self.scratch {
                right[c] += 1;
            }
            let mut sq_left: u128 = 0;
            let mut sq_right: u128 = right.iter().map(|&c| (c as u128) * (c as u128)).sum();
            for i in 0..m - 1 {
                let (v, c) = self.scratch[i];
                sq_left += 2 * left[c] as u128 + 1;
                sq_right -= 2 * right[c] as u128 - 1;
                left[c] += 1;
                right[c] -= 1;
                let next = self.scratch[i + 1].0;
                if v == next {
                    continue;
                }
                let n_left = (i + 1) as u128;
                let n_right = (m - i - 1) as u128;
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                let cand = Candidate {
                    num: n_right * sq_left + n_left * sq_right,
                    den: n_left * n_right,
                    feature: f,
                    threshold,
                };
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
        }
        best
    }

    fn leaf(counts: &[usize], classes: &[u32]) -> Node {
        let mut best = 0;
        for (k, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = k;
            }
        }
        Node::Leaf {
            class: classes[best],
            n: counts.iter().sum(),
        }
    }

    fn grow<R: Rng>(mut self, samples: Vec<usize>, classes: &[u32], rng: &mut R) -> (Tree, Vec<f64>) {
        let n_features = self.columns.len();
        self.nodes.push(Node::Leaf { class: 0, n: 0 });
        let mut stack = vec![(0usize, samples)];
        while let Some((id, samples)) = stack.pop() {
            let counts = self.counts(&samples);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || samples.len() <= self.min_node_size {
                self.nodes[id] = Self::leaf(&counts, classes);
                continue;
            }
            let features = index::sample(rng, n_features, self.mtry).into_vec();
            let Some(split) = self.best_split(&samples, &features) else {
                self.nodes[id] = Self::leaf(&counts, classes);
                continue;
            };
            let m = samples.len() as f64;
            let sq_parent: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
            let decrease = split.num as f64 / split.den as f64 - sq_parent / m;
            self.importance[split.feature] += decrease.max(0.0);

            let col = &self.columns[split.feature];
            let (l, r): (Vec<usize>, Vec<usize>) = samples.into_iter().partition(|&s| col[s] <= split.threshold);
            let left = self.nodes.len();
            self.nodes.push(Node::Leaf { class: 0, n: 0 });
            self.nodes.push(Node::Leaf { class: 0, n: 0 });
            self.nodes[id] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, r));
            stack.push((left, l));
        }
        (Tree { nodes: self.nodes }, self.importance)
    }
}

fn validate(x: &ArrayView2<f64>, y: &[u32], params: &ForestParams) -> Result<Vec<u32>, ForestError> {
    let (n, f) = x.dim();
    if n < 2 || n != y.len() {
        return Err(ForestError::InvalidInput(format!(
            "{n} rows with {} labels; need at least 2 labelled rows",
            y.len()
        )));
    }
    if f == 0 {
        return Err(ForestError::InvalidInput("no features".into()));
    }
    if params.mtry == 0 || params.mtry > f {
        return Err(ForestError::MtryOutOfRange {
            mtry: params.mtry,
            n_features: f,
        });
    }
    if params.n_trees == 0 {
        return Err(ForestError::InvalidInput("n_trees must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ForestError::InvalidInput("non-finite feature value".into()));
    }
    let classes = class_list(y);
    if classes.len() < 2 {
        return Err(ForestError::SingleClass);
    }
    if let Some(ss) = &params.sampsize {
        if ss.len() != classes.len() {
            return Err(ForestError::InvalidInput(format!(
                "sampsize has {} entries for {} classes",
                ss.len(),
                classes.len()
            )));
        }
        if ss.iter().sum::<usize>() == 0 {
            return Err(ForestError::InvalidInput("sampsize draws nothing".into()));
        }
        if !params.bootstrap {
            for (&want, &have) in ss.iter().zip(&class_counts(y)) {
                if want > have {
                    return Err(ForestError::InvalidInput(format!(
                        "sampsize {want} exceeds class population {have} without replacement"
                    )));
                }
            }
        }
    }
    Ok(classes)
}

fn draw_samples<R: Rng>(
    rng: &mut R,
    members: &[Vec<usize>],
    n: usize,
    params: &ForestParams,
) -> Vec<usize> {
    match (&params.sampsize, params.bootstrap) {
        (None, true) => (0..n).map(|_| rng.random_range(0..n)).collect(),
        (None, false) => (0..n).collect(),
        (Some(ss), true) => members
            .iter()
            .zip(ss)
            .flat_map(|(m, &k)| (0..k).map(|_| m[rng.random_range(0..m.len())]).collect::<Vec<_>>())
            .collect(),
        (Some(ss), false) => members
            .iter()
            .zip(ss)
            .flat_map(|(m, &k)| index::sample(rng, m.len(), k).into_iter().map(|i| m[i]).collect::<Vec<_>>())
            .collect(),
    }
}

/// Trains a forest in the current rayon pool.
pub fn fit(x: ArrayView2<f64>, y: &[u32], params: &ForestParams) -> Result<ForestModel, ForestError> {
    let classes = validate(&x, y, params)?;
    let (n, n_features) = x.dim();
    let y_idx: Vec<usize> = y.iter().map(|v| classes.binary_search(v).expect("listed")).collect();
    let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut members = vec![Vec::new(); classes.len()];
    for (i, &c) in y_idx.iter().enumerate() {
        members[c].push(i);
    }

    let grown: Vec<(Tree, Vec<f64>, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(params.seed, t as u64);
            let mut samples = draw_samples(&mut rng, &members, n, params);
            samples.sort_unstable();
            let mut inbag = vec![0u32; n];
            for &s in &samples {
                inbag[s] += 1;
            }
            let builder = TreeBuilder {
                columns: &columns,
                y: &y_idx,
                n_classes: classes.len(),
                mtry: params.mtry,
                min_node_size: params.min_node_size.max(1),
                importance: vec![0.0; n_features],
                nodes: Vec::new(),
                scratch: Vec::with_capacity(samples.len()),
            };
            let (tree, imp) = builder.grow(samples, &classes, &mut rng);
            (tree, imp, inbag)
        })
        .collect();

    let mut importance = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(grown.len());
    let mut inbag = Vec::with_capacity(grown.len());
    for (tree, imp, bag) in grown {
        for (total, v) in importance.iter_mut().zip(imp) {
            *total += v;
        }
        trees.push(tree);
        inbag.push(bag);
    }
    Ok(ForestModel {
        params: params.clone(),
        classes,
        n_features,
        registry_version: if n_features == N_FEATURES {
            REGISTRY_VERSION.to_string()
        } else {
            format!("custom-{n_features}")
        },
        trees,
        importance,
        inbag,
    })
}

/// Majority vote; ties go to the lowest class index.
fn vote(votes: &[u32]) -> usize {
    let mut best = 0;
    for (k, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = k;
        }
    }
    best
}

impl ForestModel {
    fn class_index(&self, class: u32) -> usize {
        self.classes.binary_search(&class).expect("leaf class is listed")
    }

    /// Per-class vote counts for one row.
    pub fn votes(&self, row: &[f64]) -> Result<Vec<u32>, ForestError> {
        if row.len() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                actual: row.len(),
            });
        }
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[self.class_index(tree.predict_row(row))] += 1;
        }
        Ok(votes)
    }

    pub fn predict(&self, row: &[f64]) -> Result<u32, ForestError> {
        Ok(self.classes[vote(&self.votes(row)?)])
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u32>, ForestError> {
        if x.ncols() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                actual: x.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    /// Whether the model was trained on the current feature registry.
    pub fn registry_matches(&self) -> bool {
        self.n_features != N_FEATURES || self.registry_version == REGISTRY_VERSION
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Rows are observed classes, columns estimated classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<u32>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<u32>, counts: Vec<Vec<u64>>) -> Result<Self, ForestError> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(ForestError::InvalidInput("confusion grid is not K x K".into()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// Counts `(observed, estimated)` pairs; classes absent from `classes`
    /// are an error.
    pub fn from_pairs(classes: Vec<u32>, observed: &[u32], estimated: &[u32]) -> Result<Self, ForestError> {
        let mut m = ConfusionMatrix::new(classes);
        for (&o, &e) in observed.iter().zip(estimated) {
            m.add(o, e)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, observed: u32, estimated: u32) -> Result<(), ForestError> {
        let find = |c: u32| {
            self.classes
                .iter()
                .position(|&k| k == c)
                .ok_or_else(|| ForestError::InvalidInput(format!("class {c} not in confusion matrix")))
        };
        let (o, e) = (find(observed)?, find(estimated)?);
        self.counts[o][e] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `1 - diagonal / row sum`; `None` for classes with no observations.
    pub fn per_class_error(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| 1.0 - row[i] as f64 / total as f64)
            })
            .collect()
    }

    /// Fraction of off-diagonal counts; 0 for an empty matrix.
    pub fn overall_error(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        1.0 - correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobReport {
    pub error: f64,
    pub per_class_error: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub n_evaluated: usize,
    /// Samples that were in-bag for every tree and so have no OOB vote.
    pub n_excluded: usize,
}

/// Out-of-bag vote aggregation: each sample is voted on only by the trees
/// that did not draw it.
pub fn oob_report(model: &ForestModel, x: ArrayView2<f64>, y: &[u32]) -> Result<OobReport, ForestError> {
    if model.inbag.is_empty() {
        return Err(ForestError::NoInBagRecord);
    }
    let n = x.nrows();
    if model.inbag[0].len() != n || y.len() != n {
        return Err(ForestError::InvalidInput("OOB data differs from the training data".into()));
    }
    if x.ncols() != model.n_features {
        return Err(ForestError::DimensionMismatch {
            expected: model.n_features,
            actual: x.ncols(),
        });
    }
    let predictions: Vec<Option<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i).to_vec();
            let mut votes = vec![0u32; model.classes.len()];
            let mut any = false;
            for (tree, bag) in model.trees.iter().zip(&model.inbag) {
                if bag[i] == 0 {
                    votes[model.class_index(tree.predict_row(&row))] += 1;
                    any = true;
                }
            }
            any.then(|| model.classes[vote(&votes)])
        })
        .collect();
    let mut confusion = ConfusionMatrix::new(model.classes.clone());
    let mut excluded = 0;
    for (pred, &obs) in predictions.iter().zip(y) {
        match pred {
            Some(p) => confusion.add(obs, *p)?,
            None => excluded += 1,
        }
    }
    Ok(OobReport {
        error: confusion.overall_error(),
        per_class_error: confusion.per_class_error(),
        n_evaluated: n - excluded,
        n_excluded: excluded,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub rank: usize,
    pub feature: usize,
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceRanking {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.importance).sum()
    }

    pub fn of(&self, feature: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.feature == feature)
            .map_or(0.0, |e| e.importance)
    }
}

/// Mean decrease in Gini impurity per tree, most important first.
pub fn gini_importance(model: &ForestModel) -> ImportanceRanking {
    let names: Vec<String> = if model.n_features == N_FEATURES {
        registry().iter().map(|d| d.name.clone()).collect()
    } else {
        (0..model.n_features).map(|j| format!("f{j}")).collect()
    };
    let trees = model.trees.len().max(1) as f64;
    let mut order: Vec<usize> = (0..model.n_features).collect();
    order.sort_by(|&a, &b| model.importance[b].total_cmp(&model.importance[a]).then(a.cmp(&b)));
    ImportanceRanking {
        entries: order
            .into_iter()
            .enumerate()
            .map(|(rank, feature)| ImportanceEntry {
                rank: rank + 1,
                feature,
                name: names[feature].clone(),
                importance: model.importance[feature] / trees,
            })
            .collect(),
    }
}

/// Anything that predicts class ids for a batch of rows.
pub trait Predictor: Sync {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u32>, ForestError>;
}

/// Something that can be trained on `(x, y)`; the harnesses in `eval` only
/// rely on this contract.
pub trait Classifier: Sync {
    type Model: Predictor + Send;

    fn fit(&self, x: ArrayView2<f64>, y: &[u32], seed: u64) -> Result<Self::Model, ForestError>;
}

impl Predictor for ForestModel {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u32>, ForestError> {
        ForestModel::predict_batch(self, x)
    }
}

impl Classifier for ForestParams {
    type Model = ForestModel;

    fn fit(&self, x: ArrayView2<f64>, y: &[u32], seed: u64) -> Result<ForestModel, ForestError> {
        let params = ForestParams {
            seed,
            ..self.clone()
        };
        fit(x, y, &params)
    }
}

/// A forest whose bootstrap is stratified from the training labels of each
/// fit: `ratio` times the rarest class count, capped per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balanced {
    pub params: ForestParams,
    pub ratio: f64,
}

impl Classifier for Balanced {
    type Model = ForestModel;

    fn fit(&self, x: ArrayView2<f64>, y: &[u32], seed: u64) -> Result<ForestModel, ForestError> {
        let params = ForestParams {
            seed,
            sampsize: Some(stratified_sampsize(&class_counts(y), self.ratio)?),
            ..self.params.clone()
        };
        fit(x, y, &params)
    }
}

/// Always predicts the same class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantPredictor(pub u32);

impl Predictor for ConstantPredictor {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u32>, ForestError> {
        Ok(vec![self.0; x.nrows()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64) -> (Array2<f64>, Vec<u32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Array2::zeros((2 * n_per, 2));
        let mut y = Vec::new();
        for i in 0..2 * n_per {
            let c = (i % 2) as u32;
            x[[i, 0]] = 6.0 * c as f64 + noise.sample(&mut rng);
            x[[i, 1]] = noise.sample(&mut rng);
            y.push(c + 1);
        }
        (x, y)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[10, 0, 0, 0]), Ok(0.0));
        assert_eq!(gini_impurity(&[5, 5]), Ok(0.5));
        assert_eq!(gini_impurity(&[10, 10, 0, 0]), Ok(0.5));
        assert_eq!(gini_impurity(&[0, 0]), Err(ForestError::EmptyNode));
    }

    #[test]
    fn sampsize_examples() {
        assert_eq!(stratified_sampsize(&[2000, 100, 150, 80], 6.0).unwrap(), vec![480, 100, 150, 80]);
        assert_eq!(stratified_sampsize(&[50, 50, 50], 6.0).unwrap(), vec![50, 50, 50]);
        assert_eq!(stratified_sampsize(&[90, 80], 6.0).unwrap(), vec![90, 80]);
        assert!(stratified_sampsize(&[90], 6.0).is_err());
    }

    #[test]
    fn separable_blobs_have_low_oob_error() {
        let (x, y) = blobs(100, 1);
        let model = fit(x.view(), &y, &ForestParams { mtry: 1, seed: 3, ..Default::default() }).unwrap();
        let oob = oob_report(&model, x.view(), &y).unwrap();
        assert!(oob.error < 0.05, "{}", oob.error);
        let pred = model.predict_batch(x.view()).unwrap();
        let correct = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / y.len() as f64 > 0.99);
    }

    #[test]
    fn single_full_tree_shatters_consistent_data() {
        let (x, y) = blobs(40, 9);
        let model = fit(x.view(), &y, &ForestParams::single_tree(2)).unwrap();
        assert_eq!(model.predict_batch(x.view()).unwrap(), y);
    }

    #[test]
    fn same_seed_same_json() {
        let (x, y) = blobs(50, 2);
        let p = ForestParams { n_trees: 20, mtry: 1, seed: 11, ..Default::default() };
        let a = fit(x.view(), &y, &p).unwrap().to_json();
        let b = fit(x.view(), &y, &p).unwrap().to_json();
        assert_eq!(a, b);
        let back = ForestModel::from_json(&a).unwrap();
        assert_eq!(back.to_json(), a);
    }

    #[test]
    fn fit_errors() {
        let x = array![[1.0], [2.0], [3.0]];
        assert_eq!(fit(x.view(), &[1, 1, 1], &ForestParams::single_tree(1)), Err(ForestError::SingleClass));
        let p = ForestParams { mtry: 2, ..Default::default() };
        assert!(matches!(fit(x.view(), &[1, 2, 1], &p), Err(ForestError::MtryOutOfRange { .. })));
    }

    #[test]
    fn predict_checks_dimension() {
        let (x, y) = blobs(20, 4);
        let model = fit(x.view(), &y, &ForestParams { n_trees: 5, mtry: 2, ..Default::default() }).unwrap();
        assert_eq!(
            model.predict(&[0.0]),
            Err(ForestError::DimensionMismatch { expected: 2, actual: 1 })
        );
    }

    #[test]
    fn vote_ties_go_low() {
        assert_eq!(vote(&[30, 30, 25, 15]), 0);
        assert_eq!(vote(&[1, 3, 3]), 1);
    }

    #[test]
    fn four_class_grid_row_errors() {
        let m = ConfusionMatrix::from_counts(
            vec![1, 2, 3, 4],
            vec![
                vec![31823, 689, 845, 222],
                vec![4221, 12068, 799, 237],
                vec![3170, 580, 13882, 323],
                vec![2802, 617, 539, 7823],
            ],
        )
        .unwrap();
        let e = m.per_class_error();
        assert!((e[0].unwrap() - 1756.0 / 33579.0).abs() < 1e-12);
        assert!((e[1].unwrap() - 5257.0 / 17325.0).abs() < 1e-12);
        assert!((m.overall_error() - 15044.0 / 80640.0).abs() < 1e-12);
        assert_eq!(m.total(), 80640);
    }

    #[test]
    fn importance_examples() {
        // feature 0 separates, feature 1 is noise
        let (x, y) = blobs(100, 5);
        let model = fit(x.view(), &y, &ForestParams { mtry: 1, seed: 8, ..Default::default() }).unwrap();
        let rank = gini_importance(&model);
        assert_eq!(rank.entries[0].feature, 0);
        assert!(rank.of(0) > 5.0 * rank.of(1));
        assert!(rank.entries.iter().all(|e| e.importance >= 0.0));

        // a feature that is never split on scores 0
        let mut x3 = Array2::zeros((200, 3));
        x3.slice_mut(ndarray::s![.., 0..2]).assign(&x);
        x3.column_mut(2).fill(4.0);
        let model = fit(x3.view(), &y, &ForestParams { mtry: 3, n_trees: 10, ..Default::default() }).unwrap();
        assert_eq!(gini_importance(&model).of(2), 0.0);

        // single feature carries all importance
        let x1 = x.slice(ndarray::s![.., 0..1]).to_owned();
        let model = fit(x1.view(), &y, &ForestParams { mtry: 1, n_trees: 10, ..Default::default() }).unwrap();
        let r = gini_importance(&model);
        assert_eq!(r.entries.len(), 1);
        assert!(r.total() > 0.0);
    }

    #[test]
    fn json_node_shape() {
        let tree = Tree {
            nodes: vec![
                Node::Split { feature: 3, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { class: 1, n: 4 },
                Node::Leaf { class: 2, n: 6 },
            ],
        };
        let text = serde_json::to_string(&tree).unwrap();
        assert_eq!(text, r#"{"nodes":[{"f":3,"t":0.5,"l":1,"r":2},{"leaf":1,"n":4},{"leaf":2,"n":6}]}"#);
        assert_eq!(serde_json::from_str::<Tree>(&text).unwrap(), tree);
        assert_eq!(tree.predict_row(&[0.0, 0.0, 0.0, 0.7]), 2);
    }

    #[test]
    fn balanced_recomputes_sampsize_per_fit() {
        let x = Array2::from_shape_fn((60, 1), |(i, _)| i as f64);
        let y: Vec<u32> = (0..60).map(|i| if i < 50 { 1 } else { 2 }).collect();
        let b = Balanced { params: ForestParams { n_trees: 3, mtry: 1, ..Default::default() }, ratio: 2.0 };
        let m = b.fit(x.view(), &y, 4).unwrap();
        assert_eq!(m.params.sampsize, Some(vec![20, 10]));
        assert_eq!(m.params.seed, 4);
        let m = b.fit(x.slice(ndarray::s![20.., ..]), &y[20..], 4).unwrap();
        assert_eq!(m.params.sampsize, Some(vec![20, 10]));
        let m = b.fit(x.slice(ndarray::s![45.., ..]), &y[45..], 4).unwrap();
        assert_eq!(m.params.sampsize, Some(vec![5, 10]));
    }
}
