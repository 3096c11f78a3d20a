//! Cross-validation protocols and personalization experiments.
//!
//! Errors and accuracies in reports are percentages. Every protocol builds
//! explicit [`Fold`]s (row indices) before training so partition properties
//! can be checked independently of the classifier.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, RowKey};
use crate::forest::{
    self, class_counts, class_list, stratified_sampsize, Classifier, ConfusionMatrix, ConstantPredictor, ForestError,
    ForestParams, Predictor,
};
use crate::labels::{LabelError, LabelMode};
use crate::seed::{derive_seed, stream_rng};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two values")]
    TooShort,
    #[error("correlation undefined for a constant vector")]
    ConstantVector,
    #[error("no values to summarize")]
    Empty,
    #[error("value {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("k = {k} folds need 2 <= k <= n = {n}")]
    InvalidK { k: usize, n: usize },
    #[error("{0}")]
    Protocol(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantVector);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub subjects: Vec<String>,
    pub threshold: f64,
    /// `None` where the correlation is undefined (constant ratings).
    pub rho: Vec<Vec<Option<f64>>>,
    pub adjacency: Vec<Vec<usize>>,
    /// `(isolated subject, partner)` links added so nobody is alone.
    pub fallback: Vec<(usize, usize)>,
}

impl NeighborGraph {
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.adjacency[s]
    }

    pub fn is_complete(&self) -> bool {
        let n = self.adjacency.len();
        self.adjacency.iter().all(|a| a.len() == n - 1)
    }
}

/// Links subjects whose rating vectors correlate above `threshold` (strict).
/// A subject left without neighbors is linked to its highest-correlation
/// partner, or to the first other subject if no correlation is defined.
pub fn build_neighbor_graph(
    subjects: &[String],
    ratings: &[Vec<f64>],
    threshold: f64,
) -> Result<NeighborGraph, EvalError> {
    let n = ratings.len();
    if n < 2 || subjects.len() != n {
        return Err(EvalError::Protocol("neighbor graph needs at least two named subjects".into()));
    }
    let mut rho = vec![vec![None; n]; n];
    for i in 0..n {
        rho[i][i] = Some(1.0);
        for j in i + 1..n {
            let r = match pearson(&ratings[i], &ratings[j]) {
                Ok(r) => Some(r),
                Err(EvalError::ConstantVector) => None,
                Err(e) => return Err(e),
            };
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    let mut adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && rho[i][j].is_some_and(|r| r > threshold)).collect())
        .collect();
    let mut fallback = Vec::new();
    for i in 0..n {
        if !adjacency[i].is_empty() {
            continue;
        }
        let mut partner = None;
        for j in (0..n).filter(|&j| j != i) {
            if let Some(r) = rho[i][j] {
                if partner.is_none_or(|(_, best)| r > best) {
                    partner = Some((j, r));
                }
            }
        }
        let j = partner.map_or(if i == 0 { 1 } else { 0 }, |(j, _)| j);
        adjacency[i].push(j);
        adjacency[j].push(i);
        adjacency[j].sort_unstable();
        fallback.push((i, j));
    }
    Ok(NeighborGraph {
        subjects: subjects.to_vec(),
        threshold,
        rho,
        adjacency,
        fallback,
    })
}

/// Default correlation threshold for a label mode's similarity axis.
pub fn default_rho(mode: LabelMode) -> f64 {
    match mode {
        LabelMode::Arousal => 0.30,
        _ => 0.35,
    }
}

/// One subject's rows with class targets for a label mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub keys: Vec<RowKey>,
    pub x: Array2<f64>,
    pub y: Vec<u32>,
    /// Ratings per trial, indexed by trial number.
    pub trial_ratings: BTreeMap<usize, [f32; 4]>,
}

impl SubjectData {
    /// One rating per trial on `axis`, in trial order.
    pub fn rating_vector(&self, axis: usize) -> Vec<f64> {
        self.trial_ratings.values().map(|r| f64::from(r[axis])).collect()
    }
}

/// Splits a feature matrix by subject and maps ratings to classes.
pub fn split_subjects(m: &FeatureMatrix, mode: LabelMode) -> Result<Vec<SubjectData>, EvalError> {
    (0..m.subjects.len())
        .map(|s| {
            let rows = m.rows_of_subject(s);
            let y = rows
                .iter()
                .map(|&r| mode.class_of(&m.ratings[r]))
                .collect::<Result<Vec<_>, _>>()?;
            let trial_ratings = rows.iter().map(|&r| (m.keys[r].trial, m.ratings[r])).collect();
            Ok(SubjectData {
                id: m.subjects[s].clone(),
                keys: rows.iter().map(|&r| m.keys[r]).collect(),
                x: m.values.select(Axis(0), &rows),
                y,
                trial_ratings,
            })
        })
        .collect()
}

/// Class targets of every row of `m`.
pub fn targets(m: &FeatureMatrix, mode: LabelMode) -> Result<Vec<u32>, EvalError> {
    Ok(m.ratings.iter().map(|r| mode.class_of(r)).collect::<Result<_, _>>()?)
}

/// Neighbor graph over the subjects' ratings on the mode's similarity axis.
pub fn subject_graph(subjects: &[SubjectData], mode: LabelMode, threshold: f64) -> Result<NeighborGraph, EvalError> {
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let ratings: Vec<Vec<f64>> = subjects.iter().map(|s| s.rating_vector(mode.similarity_axis())).collect();
    build_neighbor_graph(&ids, &ratings, threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct trial: train on the other trials, test on its rows.
pub fn loto_folds(keys: &[RowKey]) -> Vec<Fold> {
    let trials: Vec<usize> = {
        let mut t: Vec<usize> = keys.iter().map(|k| k.trial).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    trials
        .iter()
        .enumerate()
        .map(|(index, &trial)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&i| keys[i].trial == trial);
            Fold { index, train, test }
        })
        .collect()
}

/// Seeded shuffle of `n_groups` groups into `k` folds; the first `n % k`
/// folds get one extra group.
fn assign_groups(n_groups: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || k > n_groups {
        return Err(EvalError::InvalidK { k, n: n_groups });
    }
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let (base, extra) = (n_groups / k, n_groups % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut members = order[at..at + size].to_vec();
        members.sort_unstable();
        folds.push(members);
        at += size;
    }
    Ok(folds)
}

/// `k` near-equal folds over `n` rows.
pub fn kfold_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let groups: Vec<usize> = (0..n).collect();
    grouped_folds(&groups, k, seed)
}

/// `k` folds over groups (e.g. videos): all rows of a group share a fold.
/// Group ids may be arbitrary; fold sizes are balanced in groups.
pub fn grouped_folds(groups: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let assignment = assign_groups(ids.len(), k, seed)?;
    let mut fold_of = vec![0; ids.len()];
    for (f, members) in assignment.iter().enumerate() {
        for &g in members {
            fold_of[g] = f;
        }
    }
    let row_fold: Vec<usize> = groups
        .iter()
        .map(|g| fold_of[ids.binary_search(g).expect("listed")])
        .collect();
    Ok((0..k)
        .map(|index| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..groups.len()).partition(|&i| row_fold[i] == index);
            Fold { index, train, test }
        })
        .collect())
}

/// A trained model, or a constant stand-in when the training fold held one
/// class only.
pub enum Fitted<M> {
    Model(M),
    Constant(ConstantPredictor),
}

impl<M: Predictor> Predictor for Fitted<M> {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u32>, ForestError> {
        match self {
            Fitted::Model(m) => m.predict_batch(x),
            Fitted::Constant(c) => c.predict_batch(x),
        }
    }
}

impl<M> Fitted<M> {
    pub fn is_constant(&self) -> bool {
        matches!(self, Fitted::Constant(_))
    }
}

pub fn fit_or_constant<C: Classifier>(
    classifier: &C,
    x: ArrayView2<f64>,
    y: &[u32],
    seed: u64,
) -> Result<Fitted<C::Model>, EvalError> {
    match class_list(y).as_slice() {
        [] => Err(EvalError::Protocol("empty training fold".into())),
        [only] => Ok(Fitted::Constant(ConstantPredictor(*only))),
        _ => Ok(Fitted::Model(classifier.fit(x, y, seed)?)),
    }
}

/// Majority class; ties go to the lowest class id.
pub fn majority(labels: &[u32]) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(u32, usize)> = None;
    for (class, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((class, c));
        }
    }
    best.map(|(class, _)| class)
}

fn error_pct(observed: &[u32], predicted: &[u32]) -> f64 {
    let wrong = observed.iter().zip(predicted).filter(|(a, b)| a != b).count();
    100.0 * wrong as f64 / observed.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary, EvalError> {
    let Some(&first) = values.first() else {
        return Err(EvalError::Empty);
    };
    let n = values.len();
    // shifted so a constant input reproduces its value exactly
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
        a + (b - a) / 2.0
    };
    Ok(Summary {
        n,
        mean,
        median,
        std,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Ten-point bins over [0, 100]. Edge values go to the upper bin; 100 goes
/// to the last one.
pub fn histogram(values: &[f64]) -> Result<Vec<HistogramBin>, EvalError> {
    let mut counts = [0usize; 10];
    for &v in values {
        if !(0.0..=100.0).contains(&v) {
            return Err(EvalError::OutOfRange(v));
        }
        counts[((v / 10.0).floor() as usize).min(9)] += 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(b, &count)| HistogramBin {
            lo: 10.0 * b as f64,
            hi: 10.0 * (b + 1) as f64,
            count,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub error: f64,
    /// Training fold had a single class; a constant classifier was used.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub protocol: String,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
    pub confusion: ConfusionMatrix,
    pub flagged_folds: Vec<usize>,
}

impl CvReport {
    pub fn fold_errors(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.error).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedVideo {
    pub subject: String,
    pub trial: usize,
    pub observed: u32,
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub videos: Vec<TruncatedVideo>,
    pub accuracy: f64,
}

impl TruncationReport {
    fn from_videos(videos: Vec<TruncatedVideo>) -> Self {
        let correct = videos.iter().filter(|v| v.observed == v.predicted).count();
        let accuracy = 100.0 * correct as f64 / videos.len().max(1) as f64;
        TruncationReport { videos, accuracy }
    }
}

/// Every class id of `mode`, for confusion matrices that show absent classes.
pub fn mode_classes(mode: LabelMode) -> Vec<u32> {
    (1..=mode.n_classes()).collect()
}

/// Leave-one-trial-out on one subject: one fold per video, window-level
/// error per fold and one majority-vote label per video.
pub fn loto_cv<C: Classifier>(
    subject: &SubjectData,
    classes: &[u32],
    classifier: &C,
    seed: u64,
) -> Result<(CvReport, TruncationReport), EvalError> {
    let folds = loto_folds(&subject.keys);
    let outcomes: Vec<(FoldResult, Vec<u32>)> = folds
        .par_iter()
        .map(|fold| {
            let x_train = subject.x.select(Axis(0), &fold.train);
            let y_train: Vec<u32> = fold.train.iter().map(|&i| subject.y[i]).collect();
            let model = fit_or_constant(classifier, x_train.view(), &y_train, derive_seed(seed, fold.index as u64))?;
            let x_test = subject.x.select(Axis(0), &fold.test);
            let pred = model.predict_batch(x_test.view())?;
            let observed: Vec<u32> = fold.test.iter().map(|&i| subject.y[i]).collect();
            Ok((
                FoldResult {
                    fold: fold.index,
                    n_train: fold.train.len(),
                    n_test: fold.test.len(),
                    error: error_pct(&observed, &pred),
                    flagged: model.is_constant(),
                },
                pred,
            ))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    let mut videos = Vec::with_capacity(folds.len());
    for (fold, (_, pred)) in folds.iter().zip(&outcomes) {
        for (&i, &p) in fold.test.iter().zip(pred) {
            confusion.add(subject.y[i], p)?;
        }
        let first = fold.test[0];
        videos.push(TruncatedVideo {
            subject: subject.id.clone(),
            trial: subject.keys[first].trial,
            observed: subject.y[first],
            predicted: majority(pred).expect("non-empty test fold"),
        });
    }
    let results: Vec<FoldResult> = outcomes.into_iter().map(|(r, _)| r).collect();
    let errors: Vec<f64> = results.iter().map(|r| r.error).collect();
    Ok((
        CvReport {
            protocol: "loto".into(),
            summary: summarize(&errors)?,
            flagged_folds: results.iter().filter(|r| r.flagged).map(|r| r.fold).collect(),
            folds: results,
            confusion,
        },
        TruncationReport::from_videos(videos),
    ))
}

/// Statistics over subjects of each subject's fold-error mean and std, plus
/// the pooled fold errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSummary {
    pub of_means: Summary,
    pub of_stds: Summary,
    pub pooled: Summary,
}

pub fn nested_summary(reports: &[CvReport]) -> Result<NestedSummary, EvalError> {
    let means: Vec<f64> = reports.iter().map(|r| r.summary.mean).collect();
    let stds: Vec<f64> = reports.iter().map(|r| r.summary.std).collect();
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.fold_errors()).collect();
    Ok(NestedSummary {
        of_means: summarize(&means)?,
        of_stds: summarize(&stds)?,
        pooled: summarize(&pooled)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LosoScope {
    All,
    Neighbors { graph: NeighborGraph, pooled: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub subject: String,
    pub neighbors: Vec<String>,
    pub window_error: f64,
    pub truncated_error: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub scope: String,
    pub folds: Vec<LosoFold>,
    pub window_summary: Summary,
    pub truncated_summary: Summary,
    pub confusion: ConfusionMatrix,
    pub truncation: TruncationReport,
}

fn stack(subjects: &[&SubjectData]) -> (Array2<f64>, Vec<u32>) {
    let views: Vec<ArrayView2<f64>> = subjects.iter().map(|s| s.x.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal feature counts");
    let y = subjects.iter().flat_map(|s| s.y.iter().copied()).collect();
    (x, y)
}

/// Majority vote per row across several prediction vectors.
fn vote_rows(predictions: &[Vec<u32>]) -> Vec<u32> {
    (0..predictions[0].len())
        .map(|r| {
            let column: Vec<u32> = predictions.iter().map(|p| p[r]).collect();
            majority(&column).expect("at least one voter")
        })
        .collect()
}

fn truncate_videos(subject: &SubjectData, pred: &[u32]) -> Vec<TruncatedVideo> {
    loto_folds(&subject.keys)
        .into_iter()
        .map(|f| {
            let votes: Vec<u32> = f.test.iter().map(|&i| pred[i]).collect();
            TruncatedVideo {
                subject: subject.id.clone(),
                trial: subject.keys[f.test[0]].trial,
                observed: subject.y[f.test[0]],
                predicted: majority(&votes).expect("non-empty video"),
            }
        })
        .collect()
}

/// Leave-one-subject-out. With `All` one model is trained on every other
/// subject; with `Neighbors` each graph neighbor's personalized model votes
/// per row (or, `pooled`, one model is trained on the neighbors' rows).
pub fn loso_cv<C: Classifier>(
    subjects: &[SubjectData],
    classes: &[u32],
    classifier: &C,
    scope: &LosoScope,
    seed: u64,
) -> Result<LosoReport, EvalError>
where
    C::Model: Sync,
{
    let n = subjects.len();
    if n < 2 {
        return Err(EvalError::Protocol("leave-one-subject-out needs at least two subjects".into()));
    }
    if let LosoScope::Neighbors { graph, .. } = scope {
        if graph.adjacency.len() != n {
            return Err(EvalError::Protocol("neighbor graph does not match the subjects".into()));
        }
    }

    let personal: Vec<Fitted<C::Model>> = match scope {
        LosoScope::Neighbors { pooled: false, .. } => subjects
            .par_iter()
            .enumerate()
            .map(|(s, d)| fit_or_constant(classifier, d.x.view(), &d.y, derive_seed(seed, (n + s) as u64)))
            .collect::<Result<_, _>>()?,
        _ => Vec::new(),
    };

    let outcomes: Vec<(LosoFold, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let test = &subjects[i];
            let (neighbors, pred, flagged) = match scope {
                LosoScope::All => {
                    let others: Vec<&SubjectData> = (0..n).filter(|&j| j != i).map(|j| &subjects[j]).collect();
                    let (x, y) = stack(&others);
                    let model = fit_or_constant(classifier, x.view(), &y, derive_seed(seed, i as u64))?;
                    let pred = model.predict_batch(test.x.view())?;
                    (Vec::new(), pred, model.is_constant())
                }
                LosoScope::Neighbors { graph, pooled } => {
                    let nb = graph.neighbors(i).to_vec();
                    if nb.is_empty() {
                        return Err(EvalError::Protocol(format!("subject {} has no neighbors", test.id)));
                    }
                    if *pooled {
                        let group: Vec<&SubjectData> = nb.iter().map(|&j| &subjects[j]).collect();
                        let (x, y) = stack(&group);
                        let model = fit_or_constant(classifier, x.view(), &y, derive_seed(seed, i as u64))?;
                        let pred = model.predict_batch(test.x.view())?;
                        (nb, pred, model.is_constant())
                    } else {
                        let votes: Vec<Vec<u32>> = nb
                            .iter()
                            .map(|&j| personal[j].predict_batch(test.x.view()))
                            .collect::<Result<_, _>>()?;
                        let flagged = nb.iter().any(|&j| personal[j].is_constant());
                        (nb, vote_rows(&votes), flagged)
                    }
                }
            };
            let videos = truncate_videos(test, &pred);
            let wrong_videos = videos.iter().filter(|v| v.observed != v.predicted).count();
            Ok((
                LosoFold {
                    subject: test.id.clone(),
                    neighbors: neighbors.iter().map(|&j| subjects[j].id.clone()).collect(),
                    window_error: error_pct(&test.y, &pred),
                    truncated_error: 100.0 * wrong_videos as f64 / videos.len().max(1) as f64,
                    flagged,
                },
                pred,
            ))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    let mut videos = Vec::new();
    for (s, (_, pred)) in subjects.iter().zip(&outcomes) {
        for (&o, &p) in s.y.iter().zip(pred) {
            confusion.add(o, p)?;
        }
        videos.extend(truncate_videos(s, pred));
    }
    let folds: Vec<LosoFold> = outcomes.into_iter().map(|(f, _)| f).collect();
    let window: Vec<f64> = folds.iter().map(|f| f.window_error).collect();
    let truncated: Vec<f64> = folds.iter().map(|f| f.truncated_error).collect();
    Ok(LosoReport {
        scope: match scope {
            LosoScope::All => "all".into(),
            LosoScope::Neighbors { pooled: false, .. } => "neighbors".into(),
            LosoScope::Neighbors { pooled: true, .. } => "neighbors-pooled".into(),
        },
        window_summary: summarize(&window)?,
        truncated_summary: summarize(&truncated)?,
        folds,
        confusion,
        truncation: TruncationReport::from_videos(videos),
    })
}

/// k-fold cross-validation through the classifier contract. With `groups`,
/// whole groups (e.g. videos) are assigned to folds.
pub fn kfold_cv<C: Classifier>(
    x: ArrayView2<f64>,
    y: &[u32],
    groups: Option<&[usize]>,
    k: usize,
    classes: &[u32],
    classifier: &C,
    seed: u64,
) -> Result<CvReport, EvalError> {
    if y.len() != x.nrows() {
        return Err(EvalError::LengthMismatch(x.nrows(), y.len()));
    }
    let folds = match groups {
        Some(g) => grouped_folds(g, k, seed)?,
        None => kfold_folds(y.len(), k, seed)?,
    };
    let outcomes: Vec<(FoldResult, Vec<u32>)> = folds
        .par_iter()
        .map(|fold| {
            let x_train = x.select(Axis(0), &fold.train);
            let y_train: Vec<u32> = fold.train.iter().map(|&i| y[i]).collect();
            let model = fit_or_constant(classifier, x_train.view(), &y_train, derive_seed(seed, 1 + fold.index as u64))?;
            let pred = model.predict_batch(x.select(Axis(0), &fold.test).view())?;
            let observed: Vec<u32> = fold.test.iter().map(|&i| y[i]).collect();
            Ok((
                FoldResult {
                    fold: fold.index,
                    n_train: fold.train.len(),
                    n_test: fold.test.len(),
                    error: error_pct(&observed, &pred),
                    flagged: model.is_constant(),
                },
                pred,
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    for (fold, (_, pred)) in folds.iter().zip(&outcomes) {
        for (&i, &p) in fold.test.iter().zip(pred) {
            confusion.add(y[i], p)?;
        }
    }
    let results: Vec<FoldResult> = outcomes.into_iter().map(|(r, _)| r).collect();
    let errors: Vec<f64> = results.iter().map(|r| r.error).collect();
    Ok(CvReport {
        protocol: "kfold".into(),
        summary: summarize(&errors)?,
        flagged_folds: results.iter().filter(|r| r.flagged).map(|r| r.fold).collect(),
        folds: results,
        confusion,
    })
}

/// Widens a confusion matrix to `classes`, leaving absent classes at zero.
pub fn expand_confusion(m: &ConfusionMatrix, classes: &[u32]) -> ConfusionMatrix {
    let mut out = ConfusionMatrix::new(classes.to_vec());
    for (i, &o) in m.classes.iter().enumerate() {
        for (j, &e) in m.classes.iter().enumerate() {
            if let (Some(a), Some(b)) = (classes.iter().position(|&c| c == o), classes.iter().position(|&c| c == e)) {
                out.counts[a][b] += m.counts[i][j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectOob {
    pub subject: String,
    /// Percent.
    pub error: f64,
    /// Per class over all mode classes; `None` where the subject has no
    /// trials of that class.
    pub per_class_error: Vec<Option<f64>>,
    pub sampsize: Option<Vec<usize>>,
    pub confusion: ConfusionMatrix,
    pub excluded: usize,
    pub flagged: bool,
}

/// A personalized forest per subject, scored by OOB error. With
/// `balance_ratio` the bootstrap is stratified.
pub fn per_subject_oob(
    subjects: &[SubjectData],
    classes: &[u32],
    params: &ForestParams,
    balance_ratio: Option<f64>,
) -> Result<Vec<SubjectOob>, EvalError> {
    subjects
        .iter()
        .enumerate()
        .map(|(s, d)| {
            if class_list(&d.y).len() < 2 {
                let confusion = expand_confusion(
                    &ConfusionMatrix::from_pairs(class_list(&d.y), &d.y, &d.y)?,
                    classes,
                );
                return Ok(SubjectOob {
                    subject: d.id.clone(),
                    error: 0.0,
                    per_class_error: confusion.per_class_error(),
                    sampsize: None,
                    confusion,
                    excluded: 0,
                    flagged: true,
                });
            }
            let sampsize = match balance_ratio {
                Some(r) => Some(stratified_sampsize(&class_counts(&d.y), r)?),
                None => None,
            };
            let p = ForestParams {
                sampsize: sampsize.clone(),
                seed: derive_seed(params.seed, s as u64),
                ..params.clone()
            };
            let model = forest::fit(d.x.view(), &d.y, &p)?;
            let oob = forest::oob_report(&model, d.x.view(), &d.y)?;
            let confusion = expand_confusion(&oob.confusion, classes);
            Ok(SubjectOob {
                subject: d.id.clone(),
                error: 100.0 * oob.error,
                per_class_error: confusion.per_class_error(),
                sampsize,
                confusion,
                excluded: oob.n_excluded,
                flagged: false,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 6.0, 8.0, 10.0];
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(EvalError::ConstantVector));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(EvalError::TooShort));
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn identical_ratings_give_complete_graph() {
        let r = vec![vec![1.0, 5.0, 3.0, 7.0]; 4];
        let g = build_neighbor_graph(&names(4), &r, 0.35).unwrap();
        assert!(g.is_complete());
        assert!(g.fallback.is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        // rho(a, b) = 0.5 exactly
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![1.0, 3.0, 2.0];
        let g = build_neighbor_graph(&names(2), &[a.clone(), b.clone()], 0.5).unwrap();
        assert_eq!(g.fallback, vec![(0, 1)]);
        let g = build_neighbor_graph(&names(2), &[a, b], 0.49).unwrap();
        assert!(g.fallback.is_empty());
        assert_eq!(g.adjacency, vec![vec![1], vec![0]]);
    }

    #[test]
    fn anticorrelated_subject_gets_one_fallback() {
        let base = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut r = vec![base.clone(), base.clone(), base.iter().map(|v| v * 1.1 + 0.3).collect()];
        r.push(vec![6.0, 5.0, 4.0, 3.2, 2.0, 1.0]);
        let g = build_neighbor_graph(&names(4), &r, 0.35).unwrap();
        assert_eq!(g.adjacency[3].len(), 1);
        assert_eq!(g.fallback.len(), 1);
        for i in 0..4 {
            for &j in &g.adjacency[i] {
                assert!(g.adjacency[j].contains(&i));
            }
        }
    }

    #[test]
    fn constant_ratings_fall_back_to_first_subject() {
        let r = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]];
        let g = build_neighbor_graph(&names(3), &r, 0.35).unwrap();
        assert_eq!(g.adjacency[2], vec![0]);
        assert_eq!(g.rho[2][0], None);
    }

    #[test]
    fn kfold_sizes() {
        let sizes = |n, k| {
            kfold_folds(n, k, 3)
                .unwrap()
                .iter()
                .map(|f| f.test.len())
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(100, 10), vec![10; 10]);
        assert_eq!(sizes(105, 10), vec![11, 11, 11, 11, 11, 10, 10, 10, 10, 10]);
        assert_eq!(kfold_folds(5, 6, 0), Err(EvalError::InvalidK { k: 6, n: 5 }));
        let mut seen: Vec<usize> = kfold_folds(37, 4, 1).unwrap().into_iter().flat_map(|f| f.test).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let groups: Vec<usize> = (0..120).map(|i| i / 6).collect();
        for f in grouped_folds(&groups, 10, 5).unwrap() {
            assert_eq!(f.test.len(), 12);
            for &i in &f.test {
                assert!(f.train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
    }

    #[test]
    fn loto_fold_shape() {
        let keys: Vec<RowKey> = (0..40)
            .flat_map(|trial| (0..63).map(move |window| RowKey { subject: 0, trial, window }))
            .collect();
        let folds = loto_folds(&keys);
        assert_eq!(folds.len(), 40);
        assert!(folds.iter().all(|f| f.train.len() == 2457 && f.test.len() == 63));
    }

    #[test]
    fn majority_votes() {
        let mut v = vec![2u32; 40];
        v.extend([1; 23]);
        assert_eq!(majority(&v), Some(2));
        assert_eq!(majority(&[3, 1, 3, 1]), Some(1));
        assert_eq!(majority(&[]), None);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!((s.mean, s.median, s.std), (20.0, 20.0, 10.0));
        assert_eq!(summarize(&[42.0]).unwrap().std, 0.0);
        assert_eq!(summarize(&[0.1; 7]).unwrap().mean, 0.1);
        assert_eq!(summarize(&[]), Err(EvalError::Empty));
        assert_eq!(summarize(&[1.0, 2.0, 3.0, 10.0]).unwrap().median, 2.5);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[60.0, 0.0, 100.0, 99.9, 10.0]).unwrap();
        assert_eq!(h.len(), 10);
        assert_eq!(h[6].count, 1);
        assert_eq!(h[0].count, 1);
        assert_eq!(h[1].count, 1);
        assert_eq!(h[9].count, 2);
        assert!(histogram(&[100.5]).is_err());
    }

    #[test]
    fn constant_classifier_on_balanced_data() {
        struct AlwaysOne;
        impl Classifier for AlwaysOne {
            type Model = ConstantPredictor;
            fn fit(&self, _: ArrayView2<f64>, _: &[u32], _: u64) -> Result<ConstantPredictor, ForestError> {
                Ok(ConstantPredictor(1))
            }
        }
        let x = Array2::zeros((100, 1));
        let y: Vec<u32> = (0..100).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
        // groups of two keep each fold exactly balanced
        let groups: Vec<usize> = (0..100).map(|i| i / 2).collect();
        let r = kfold_cv(x.view(), &y, Some(&groups), 10, &[1, 2], &AlwaysOne, 0).unwrap();
        assert!(r.folds.iter().all(|f| f.error == 50.0));
        assert_eq!(r.summary.std, 0.0);
    }
}
