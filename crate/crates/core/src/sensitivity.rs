//! Random forest of Gini CART trees, used to rank dimensions by how much they
//! drive the stable/unstable split, plus stratified k-fold accuracy.
//!
//! Trees are grown on bootstrap resamples with `ceil(sqrt(d))` candidate
//! features per node. Each tree draws from its own stream keyed by
//! `(seed, tree index)`, so training is parallel across trees and the result
//! does not depend on the worker count.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::sampling::{rng_stream, RngStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("sensitivity unavailable: dataset holds a single class")]
    SingleClass,
    #[error("dataset is empty")]
    Empty,
    #[error("row {row} has {got} features, expected {expected}")]
    Shape { row: usize, got: usize, expected: usize },
    #[error("row {row} has a non-finite feature")]
    NonFinite { row: usize },
    #[error("{features} feature rows for {labels} labels")]
    LabelCount { features: usize, labels: usize },
    #[error("forest needs at least one tree")]
    NoTrees,
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
    #[error("class with {count} samples cannot be stratified into {k} folds")]
    TooSmallToStratify { count: usize, k: usize },
}

/// Feature rows over feasible samples with their stability labels
/// (`true` = stable).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<bool>,
    n_features: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self, SensitivityError> {
        if features.len() != labels.len() {
            return Err(SensitivityError::LabelCount {
                features: features.len(),
                labels: labels.len(),
            });
        }
        let n_features = features.first().map_or(0, Vec::len);
        for (row, f) in features.iter().enumerate() {
            if f.len() != n_features {
                return Err(SensitivityError::Shape {
                    row,
                    got: f.len(),
                    expected: n_features,
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(SensitivityError::NonFinite { row });
            }
        }
        Ok(Self {
            features,
            labels,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn n_stable(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    fn check_two_classes(&self) -> Result<(), SensitivityError> {
        if self.is_empty() {
            return Err(SensitivityError::Empty);
        }
        let s = self.n_stable();
        if s == 0 || s == self.len() {
            return Err(SensitivityError::SingleClass);
        }
        Ok(())
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_features: self.n_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_tree_depth: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_tree_depth: 8,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Majority class of the training rows reaching the leaf.
        stable: bool,
        n: usize,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Axis-aligned CART tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Total weighted Gini decrease per feature (unnormalized).
    pub gini_decrease: Vec<f64>,
    /// Training rows never drawn into this tree's bootstrap.
    pub out_of_bag: Vec<usize>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { stable, .. } => return *stable,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match &nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

impl ForestModel {
    /// Majority vote; a tie counts as stable.
    pub fn predict(&self, x: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        2 * votes >= self.trees.len()
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &l)| self.predict(x) == l)
            .count();
        hits as f64 / data.len() as f64
    }
}

fn gini(stable: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = stable as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    data: &'a LabeledDataset,
    max_depth: usize,
    max_features: usize,
    nodes: Vec<TreeNode>,
    gini_decrease: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut RngStream) -> usize {
        let n = rows.len();
        let stable = rows.iter().filter(|&&r| self.data.labels[r]).count();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            stable: 2 * stable >= n,
            n,
        });
        if depth >= self.max_depth || stable == 0 || stable == n {
            return id;
        }
        let Some((feature, threshold, decrease)) = self.best_split(rows, stable, rng) else {
            return id;
        };
        self.gini_decrease[feature] += decrease;
        let data = self.data;
        rows.sort_by(|&a, &b| {
            let (fa, fb) = (data.features[a][feature], data.features[b][feature]);
            fa.total_cmp(&fb).then(a.cmp(&b))
        });
        let cut = rows.partition_point(|&r| data.features[r][feature] <= threshold);
        let (l, r) = rows.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Best (feature, threshold, weighted Gini decrease) among a random
    /// feature subset; `None` when no candidate separates the rows.
    fn best_split(&self, rows: &[usize], stable: usize, rng: &mut RngStream) -> Option<(usize, f64, f64)> {
        let n = rows.len();
        let parent = n as f64 * gini(stable, n);
        let d = self.data.n_features;
        let mut feats = index::sample(rng, d, self.max_features.min(d)).into_vec();
        feats.sort_unstable();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
        for f in feats {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.data.features[r][f], self.data.labels[r])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_stable = 0;
            for i in 1..n {
                left_stable += order[i - 1].1 as usize;
                if order[i].0 <= order[i - 1].0 {
                    continue;
                }
                let child = i as f64 * gini(left_stable, i)
                    + (n - i) as f64 * gini(stable - left_stable, n - i);
                let decrease = parent - child;
                if decrease > 1e-12 && best.is_none_or(|b| decrease > b.2) {
                    best = Some((f, 0.5 * (order[i - 1].0 + order[i].0), decrease));
                }
            }
        }
        best
    }
}

fn grow_tree(data: &LabeledDataset, params: &ForestParams, seed: u64, index: usize) -> Tree {
    let mut rng = rng_stream(seed, "", "forest", index as u64, 0);
    let n = data.len();
    let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut in_bag = vec![false; n];
    for &r in &rows {
        in_bag[r] = true;
    }
    rows.sort_unstable();
    let d = data.n_features;
    let mut grower = Grower {
        data,
        max_depth: params.max_tree_depth,
        max_features: params.max_features.unwrap_or((d as f64).sqrt().ceil() as usize).max(1),
        nodes: Vec::new(),
        gini_decrease: vec![0.0; d],
    };
    grower.grow(&mut rows, 0, &mut rng);
    Tree {
        nodes: grower.nodes,
        gini_decrease: grower.gini_decrease,
        out_of_bag: (0..n).filter(|&r| !in_bag[r]).collect(),
    }
}

/// Bagged Gini CART trees, trained in parallel.
pub fn train_forest(
    data: &LabeledDataset,
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, SensitivityError> {
    if params.n_trees == 0 {
        return Err(SensitivityError::NoTrees);
    }
    data.check_two_classes()?;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(data, params, seed, t))
        .collect();
    Ok(ForestModel {
        trees,
        n_features: data.n_features,
        seed,
    })
}

/// Mean decrease in Gini impurity per feature: normalized within each tree,
/// averaged over trees, normalized to sum 1. Uniform when no tree split.
pub fn feature_importance(forest: &ForestModel) -> Vec<f64> {
    let d = forest.n_features;
    let mut imp = vec![0.0; d];
    for t in &forest.trees {
        let total: f64 = t.gini_decrease.iter().sum();
        if total > 0.0 {
            for (acc, g) in imp.iter_mut().zip(&t.gini_decrease) {
                *acc += g / total;
            }
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    } else if d > 0 {
        imp.fill(1.0 / d as f64);
    }
    imp
}

/// Stratified k-fold accuracy: (mean, population std) over the folds.
pub fn kfold_accuracy(
    data: &LabeledDataset,
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<(f64, f64), SensitivityError> {
    if k < 2 {
        return Err(SensitivityError::BadK(k));
    }
    data.check_two_classes()?;
    let mut rng = rng_stream(seed, "", "kfold", 0, 0);
    let mut fold = vec![0usize; data.len()];
    for class in [true, false] {
        let mut members: Vec<usize> = (0..data.len()).filter(|&r| data.labels[r] == class).collect();
        if members.len() < k {
            return Err(SensitivityError::TooSmallToStratify {
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for (pos, r) in members.into_iter().enumerate() {
            fold[r] = pos % k;
        }
    }
    let acc: Vec<f64> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&r| fold[r] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&r| fold[r] == f).collect();
            let forest = train_forest(&data.subset(&train), params, seed.wrapping_add(f as u64 + 1))?;
            Ok(forest.accuracy(&data.subset(&test)))
        })
        .collect::<Result<_, SensitivityError>>()?;
    let mean = acc.iter().sum::<f64>() / k as f64;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64;
    Ok((mean, var.sqrt()))
}
