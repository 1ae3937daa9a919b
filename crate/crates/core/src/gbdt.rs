//! Squared-error gradient boosting with exact greedy regression trees.
//!
//! Rows are split once, by seed, into a training part and a holdout part.
//! Trees are fit only on training rows; the holdout weighted squared error
//! after each tree selects how many trees the final predictor uses.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into serialized ensembles.
pub const FORMAT_VERSION: u32 = 1;

/// How `max_depth` limits a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRule {
    /// At most `max_depth` levels of splits (up to `2^max_depth` leaves).
    TreeDepth,
    /// At most `max_depth` splits per tree, grown best-first.
    SplitCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub depth_rule: DepthRule,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 3000,
            max_depth: 3,
            learning_rate: 0.05,
            min_leaf: 5,
            holdout_fraction: 0.5,
            seed: 0,
            depth_rule: DepthRule::TreeDepth,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::config("n_trees must be at least 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_leaf < 1 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row(feature) < threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtEnsemble {
    pub version: u32,
    pub base_value: f64,
    pub trees: Vec<Tree>,
    /// Number of leading trees used for prediction.
    pub best_iteration: usize,
    pub n_features: usize,
    pub config: GbdtConfig,
}

/// Per-iteration diagnostics from training. Index `t` of each loss vector
/// is the loss after `t` trees.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub train_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
    /// Predictions for every input row at `best_iteration`.
    pub fitted: Vec<f64>,
}

impl GbdtEnsemble {
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::input(format!(
                "ensemble expects {} feature columns, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        let lr = self.config.learning_rate;
        let used = &self.trees[..self.best_iteration];
        Ok((0..features.nrows())
            .map(|i| {
                let mut f = self.base_value;
                for tree in used {
                    f += lr * tree.predict_row(|j| features[(i, j)]);
                }
                f
            })
            .collect())
    }

    pub fn predict_one(&self, row: &[f64]) -> Result<f64> {
        let m = DMatrix::from_row_slice(1, row.len(), row);
        Ok(self.predict(&m)?[0])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(s)
            .map_err(|err| Error::input(format!("invalid ensemble document: {err}")))?;
        if e.version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported ensemble version {} (expected {FORMAT_VERSION})",
                e.version
            )));
        }
        Ok(e)
    }
}

/// Trains an ensemble. See [`train_gbdt_traced`] for the per-iteration losses.
pub fn train_gbdt(
    features: &DMatrix<f64>,
    targets: &[f64],
    weights: &[f64],
    config: &GbdtConfig,
) -> Result<GbdtEnsemble> {
    train_gbdt_traced(features, targets, weights, config).map(|(e, _)| e)
}

fn weighted_mse(rows: &[usize], targets: &[f64], weights: &[f64], fitted: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &i in rows {
        let e = targets[i] - fitted[i];
        num += weights[i] * e * e;
        den += weights[i];
    }
    num / den
}

/// Deterministic train/holdout partition of `0..n` for a seed.
pub fn holdout_split(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * (1.0 - holdout_fraction)).round() as usize;
    let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
    let mut train = idx[..n_train].to_vec();
    let mut holdout = idx[n_train..].to_vec();
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

pub fn train_gbdt_traced(
    features: &DMatrix<f64>,
    targets: &[f64],
    weights: &[f64],
    config: &GbdtConfig,
) -> Result<(GbdtEnsemble, TrainingTrace)> {
    config.validate()?;
    let n = features.nrows();
    let p = features.ncols();
    if targets.len() != n || weights.len() != n {
        return Err(Error::input(format!(
            "{n} feature rows but {} targets and {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if p < 1 {
        return Err(Error::input("at least one feature column is required"));
    }
    if n < 2 * config.min_leaf {
        return Err(Error::input(format!(
            "need at least 2 * min_leaf = {} rows, got {n}",
            2 * config.min_leaf
        )));
    }
    if features.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::input("features and targets must be finite"));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::input("weights must be positive and finite"));
    }

    let (train_rows, holdout_rows) = holdout_split(n, config.holdout_fraction, config.seed);

    let first = targets[train_rows[0]];
    let constant = train_rows.iter().all(|&i| targets[i] == first);
    let base_value = if constant {
        first
    } else {
        let (s, w) = train_rows.iter().fold((0.0, 0.0), |(s, w), &i| {
            (s + weights[i] * targets[i], w + weights[i])
        });
        s / w
    };

    let mut fitted = vec![base_value; n];
    let mut train_loss = vec![weighted_mse(&train_rows, targets, weights, &fitted)];
    let mut holdout_loss = vec![weighted_mse(&holdout_rows, targets, weights, &fitted)];
    let mut trees = Vec::new();

    if !constant {
        let grower = Grower::new(features, &train_rows, weights, config);
        let mut residual = vec![0.0; n];
        let lr = config.learning_rate;
        trees.reserve(config.n_trees);
        for _ in 0..config.n_trees {
            for &i in &train_rows {
                residual[i] = targets[i] - fitted[i];
            }
            let tree = grower.grow(&residual);
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += lr * tree.predict_row(|j| features[(i, j)]);
            }
            train_loss.push(weighted_mse(&train_rows, targets, weights, &fitted));
            holdout_loss.push(weighted_mse(&holdout_rows, targets, weights, &fitted));
            trees.push(tree);
        }
    }

    let best_iteration = if trees.is_empty() {
        0
    } else {
        let mut best = 1;
        for t in 2..holdout_loss.len() {
            if holdout_loss[t] < holdout_loss[best] {
                best = t;
            }
        }
        best
    };

    let ensemble = GbdtEnsemble {
        version: FORMAT_VERSION,
        base_value,
        trees,
        best_iteration,
        n_features: p,
        config: *config,
    };
    let fitted = ensemble.predict(features)?;
    Ok((
        ensemble,
        TrainingTrace {
            train_rows,
            holdout_rows,
            train_loss,
            holdout_loss,
            fitted,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Tree builder over a fixed set of training rows with presorted features.
struct Grower<'a> {
    features: &'a DMatrix<f64>,
    weights: &'a [f64],
    rows: &'a [usize],
    sorted: Vec<Vec<usize>>,
    config: &'a GbdtConfig,
}

struct Pending {
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    split: Option<SplitCandidate>,
}

impl<'a> Grower<'a> {
    fn new(
        features: &'a DMatrix<f64>,
        rows: &'a [usize],
        weights: &'a [f64],
        config: &'a GbdtConfig,
    ) -> Self {
        let sorted = (0..features.ncols())
            .map(|f| {
                let col = features.column(f);
                let mut idx = rows.to_vec();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self {
            features,
            weights,
            rows,
            sorted,
            config,
        }
    }

    fn leaf_value(&self, rows: &[usize], residual: &[f64]) -> f64 {
        let (s, w) = rows.iter().fold((0.0, 0.0), |(s, w), &i| {
            (s + self.weights[i] * residual[i], w + self.weights[i])
        });
        s / w
    }

    fn grow(&self, residual: &[f64]) -> Tree {
        let (depth_cap, split_cap) = match self.config.depth_rule {
            DepthRule::TreeDepth => (self.config.max_depth, usize::MAX),
            DepthRule::SplitCount => (self.config.max_depth, self.config.max_depth),
        };
        let mut member = vec![usize::MAX; self.features.nrows()];
        for &i in self.rows {
            member[i] = 0;
        }
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut frontier =
            vec![self.pending(0, 0, self.rows.to_vec(), residual, &member, depth_cap)];
        let mut splits = 0;
        while splits < split_cap {
            // Highest gain first; among equal gains the earliest node.
            let pick = frontier
                .iter()
                .enumerate()
                .filter_map(|(k, p)| p.split.map(|s| (k, s.gain, p.node)))
                .fold(None::<(usize, f64, usize)>, |acc, c| match acc {
                    Some(a) if a.1 > c.1 || (a.1 == c.1 && a.2 < c.2) => Some(a),
                    _ => Some(c),
                });
            let Some((k, _, _)) = pick else { break };
            let leaf = frontier.swap_remove(k);
            let split = leaf.split.expect("picked leaf has a split");
            let col = self.features.column(split.feature);
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                leaf.rows.iter().partition(|&&i| col[i] < split.threshold);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[leaf.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: l,
                right: r,
            };
            for &i in &left_rows {
                member[i] = l;
            }
            for &i in &right_rows {
                member[i] = r;
            }
            splits += 1;
            frontier.push(self.pending(l, leaf.depth + 1, left_rows, residual, &member, depth_cap));
            frontier.push(self.pending(
                r,
                leaf.depth + 1,
                right_rows,
                residual,
                &member,
                depth_cap,
            ));
        }
        for p in &frontier {
            nodes[p.node] = Node::Leaf {
                value: self.leaf_value(&p.rows, residual),
            };
        }
        Tree { nodes }
    }

    fn pending(
        &self,
        node: usize,
        depth: usize,
        rows: Vec<usize>,
        residual: &[f64],
        member: &[usize],
        depth_cap: usize,
    ) -> Pending {
        let split = if depth < depth_cap && rows.len() >= 2 * self.config.min_leaf {
            best_split(
                self.features,
                &self.sorted,
                member,
                node,
                rows.len(),
                residual,
                self.weights,
                self.config.min_leaf,
            )
        } else {
            None
        };
        Pending {
            node,
            depth,
            rows,
            split,
        }
    }
}

/// Threshold strictly between two consecutive distinct values `a < b`
/// such that `a < t <= b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

/// Best weighted-SSE split of the rows whose `member` entry equals `node`.
/// Candidates are midpoints between consecutive distinct values; ties go to
/// the lowest feature index, then the smallest threshold.
#[allow(clippy::too_many_arguments)]
pub(crate) fn best_split(
    features: &DMatrix<f64>,
    sorted: &[Vec<usize>],
    member: &[usize],
    node: usize,
    count: usize,
    residual: &[f64],
    weights: &[f64],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let (mut total_w, mut total_s, mut total_q) = (0.0, 0.0, 0.0);
    for &i in &sorted[0] {
        if member[i] == node {
            let w = weights[i];
            total_w += w;
            total_s += w * residual[i];
            total_q += w * residual[i] * residual[i];
        }
    }
    let parent = total_s * total_s / total_w;
    let floor = 1e-12 * total_q;
    let mut best: Option<SplitCandidate> = None;
    for (f, order) in sorted.iter().enumerate() {
        let col = features.column(f);
        let (mut cw, mut cs) = (0.0, 0.0);
        let mut seen = 0usize;
        let mut prev = f64::NAN;
        for &i in order {
            if member[i] != node {
                continue;
            }
            let v = col[i];
            if seen >= min_leaf && count - seen >= min_leaf && v > prev {
                let rw = total_w - cw;
                let rs = total_s - cs;
                let gain = cs * cs / cw + rs * rs / rw - parent;
                if gain > floor && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold: midpoint(prev, v),
                        gain,
                    });
                }
            }
            cw += weights[i];
            cs += weights[i] * residual[i];
            seen += 1;
            prev = v;
        }
    }
    best
}
