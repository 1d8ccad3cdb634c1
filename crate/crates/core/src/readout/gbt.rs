//! Gradient-boosted regression trees: least-squares regression and
//! multinomial-deviance classification, with impurity-based importances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 1 }
    }
}

pub const MIN_GBT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Column-major copy of the features with per-feature sort orders, built
/// once per ensemble.
pub struct Presorted {
    n: usize,
    p: usize,
    cols: Vec<Vec<f64>>,
    order: Vec<Vec<usize>>,
    /// Position of each column in lexicographic order of column contents.
    col_rank: Vec<usize>,
}

impl Presorted {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let p = x.first().map_or(0, |r| r.len());
        let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
                idx
            })
            .collect();
        let mut by_content: Vec<usize> = (0..p).collect();
        by_content.sort_by(|&a, &b| {
            cols[a].iter().zip(&cols[b]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut col_rank = vec![0; p];
        for (r, &j) in by_content.iter().enumerate() {
            col_rank[j] = r;
        }
        Self { n, p, cols, order, col_rank }
    }
}

struct Candidate {
    gain: f64,
    threshold: f64,
    /// Features achieving `gain`; the first is used for the split.
    features: Vec<usize>,
}

/// Fits one least-squares tree to `target`; leaf values come from
/// `leaf_value(samples)`. Adds each split's impurity decrease to
/// `importance`, sharing it equally among features with tied best gain.
fn fit_tree(
    data: &Presorted,
    target: &[f64],
    params: &GbtParams,
    importance: &mut [f64],
    leaf_value: &dyn Fn(&[usize]) -> f64,
) -> Tree {
    let n = data.n;
    let mut node_of = vec![0usize; n];
    let mut nodes: Vec<Node> = vec![Node::Leaf(0.0)];
    let mut frontier: Vec<usize> = vec![0];
    for depth in 0..=params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &t) in frontier.iter().enumerate() {
            slot[t] = s;
        }
        let m = frontier.len();
        let mut cnt = vec![0usize; m];
        let mut sum = vec![0.0; m];
        let mut sq = vec![0.0; m];
        for i in 0..n {
            let s = slot[node_of[i]];
            if s != usize::MAX {
                cnt[s] += 1;
                sum[s] += target[i];
                sq[s] += target[i] * target[i];
            }
        }
        // Best (gain, threshold) per node and feature; within a feature the
        // lowest threshold wins exact ties.
        let mut per_feature: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; data.p]; m];
        if depth < params.max_depth {
            let mut lc = vec![0usize; m];
            let mut ls = vec![0.0; m];
            let mut last = vec![f64::NAN; m];
            for j in 0..data.p {
                lc.iter_mut().for_each(|v| *v = 0);
                ls.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                let col = &data.cols[j];
                for &i in &data.order[j] {
                    let s = slot[node_of[i]];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = col[i];
                    if lc[s] >= params.min_samples_leaf && v > last[s] && cnt[s] - lc[s] >= params.min_samples_leaf {
                        let (nl, nr) = (lc[s] as f64, (cnt[s] - lc[s]) as f64);
                        let sr = sum[s] - ls[s];
                        let gain = ls[s] * ls[s] / nl + sr * sr / nr - sum[s] * sum[s] / cnt[s] as f64;
                        if per_feature[s][j].is_none_or(|(g, _)| gain > g) {
                            per_feature[s][j] = Some((gain, last[s] + (v - last[s]) / 2.0));
                        }
                    }
                    lc[s] += 1;
                    ls[s] += target[i];
                    last[s] = v;
                }
            }
        }
        // Features within tolerance of the best gain are tied; the split uses
        // the tied column that sorts first, so results do not depend on
        // feature order.
        let mut best: Vec<Option<Candidate>> = per_feature
            .iter()
            .enumerate()
            .map(|(s, feats)| {
                let top = feats.iter().flatten().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    return None;
                }
                let tol = 1e-12 * (top.abs() + sq[s]);
                let mut tied: Vec<usize> = (0..data.p).filter(|&j| feats[j].is_some_and(|c| c.0 >= top - tol)).collect();
                tied.sort_by_key(|&j| data.col_rank[j]);
                let (gain, threshold) = feats[tied[0]].expect("tied features have candidates");
                Some(Candidate { gain, threshold, features: tied })
            })
            .collect();
        let mut next = Vec::new();
        let mut split_of: std::collections::HashMap<usize, (usize, f64, usize, usize)> = Default::default();
        for (s, &t) in frontier.iter().enumerate() {
            let sse = sq[s] - sum[s] * sum[s] / cnt[s].max(1) as f64;
            let splittable = sse > 1e-12 * sq[s].max(1e-300) && cnt[s] >= 2 * params.min_samples_leaf;
            match best[s].take() {
                Some(c) if splittable => {
                    let share = c.gain / c.features.len() as f64;
                    for &f in &c.features {
                        importance[f] += share;
                    }
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[t] = Node::Split { feature: c.features[0], threshold: c.threshold, left: l, right: r };
                    split_of.insert(t, (c.features[0], c.threshold, l, r));
                    next.push(l);
                    next.push(r);
                }
                _ => {}
            }
        }
        for i in 0..n {
            if let Some(&(f, thr, l, r)) = split_of.get(&node_of[i]) {
                node_of[i] = if data.cols[f][i] <= thr { l } else { r };
            }
        }
        frontier = next;
    }
    // Leaf values from the final partition.
    let mut members: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (i, &t) in node_of.iter().enumerate() {
        members.entry(t).or_default().push(i);
    }
    for (t, idx) in members {
        if matches!(nodes[t], Node::Leaf(_)) {
            nodes[t] = Node::Leaf(leaf_value(&idx));
        }
    }
    Tree { nodes }
}

fn normalize_into(acc: &mut [f64], tree_imp: &[f64]) {
    let total: f64 = tree_imp.iter().sum();
    if total > 0.0 {
        for (a, v) in acc.iter_mut().zip(tree_imp) {
            *a += v / total;
        }
    }
}

fn finalize_importance(mut acc: Vec<f64>) -> Vec<f64> {
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|v| *v /= total);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtRegressor {
    pub init: f64,
    pub learning_rate: f64,
    trees: Vec<Tree>,
    pub feature_importances: Vec<f64>,
}

impl GbtRegressor {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

fn check(x: &[Vec<f64>], n_targets: usize) -> Result<()> {
    if x.len() != n_targets {
        return Err(Error::Misaligned("feature rows and targets differ in length".into()));
    }
    if x.len() < MIN_GBT_SAMPLES {
        return Err(Error::InvalidArgument(format!("GBT needs ≥ {MIN_GBT_SAMPLES} samples, got {}", x.len())));
    }
    Ok(())
}

pub fn fit_gbt_regressor(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<GbtRegressor> {
    check(x, y.len())?;
    let data = Presorted::new(x);
    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut acc = vec![0.0; data.p];
    for _ in 0..params.n_estimators {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let mut imp = vec![0.0; data.p];
        let leaf = |idx: &[usize]| idx.iter().map(|&i| resid[i]).sum::<f64>() / idx.len() as f64;
        let tree = fit_tree(&data, &resid, params, &mut imp, &leaf);
        normalize_into(&mut acc, &imp);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(&x[i]);
        }
        trees.push(tree);
    }
    Ok(GbtRegressor { init, learning_rate: params.learning_rate, trees, feature_importances: finalize_importance(acc) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtClassifier {
    pub classes: Vec<usize>,
    /// Per-class raw-score offsets (log priors / log-odds).
    pub init: Vec<f64>,
    pub learning_rate: f64,
    /// `stages[m][k]`; binary problems hold one tree per stage.
    stages: Vec<Vec<Tree>>,
    pub feature_importances: Vec<f64>,
}

impl GbtClassifier {
    fn raw(&self, row: &[f64]) -> Vec<f64> {
        let mut raw = self.init.clone();
        for stage in &self.stages {
            for (k, t) in stage.iter().enumerate() {
                raw[k] += self.learning_rate * t.predict_row(row);
            }
        }
        raw
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let raw = self.raw(row);
        let idx = if self.classes.len() == 2 {
            usize::from(raw[0] > 0.0)
        } else {
            let mut best = 0;
            for k in 1..raw.len() {
                if raw[k] > raw[best] {
                    best = k;
                }
            }
            best
        };
        self.classes[idx]
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<usize> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

pub fn fit_gbt_classifier(x: &[Vec<f64>], labels: &[usize], params: &GbtParams) -> Result<GbtClassifier> {
    check(x, labels.len())?;
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateClassifier(format!("only {} class present", classes.len())));
    }
    let data = Presorted::new(x);
    let n = labels.len();
    let k = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("present")).collect();
    let mut counts = vec![0usize; k];
    y.iter().for_each(|&c| counts[c] += 1);
    let mut acc = vec![0.0; data.p];
    let mut stages = Vec::with_capacity(params.n_estimators);
    if k == 2 {
        let p1 = counts[1] as f64 / n as f64;
        let init = (p1 / (1.0 - p1)).ln();
        let mut raw = vec![init; n];
        for _ in 0..params.n_estimators {
            let prob: Vec<f64> = raw.iter().map(|&r| 1.0 / (1.0 + (-r).exp())).collect();
            let resid: Vec<f64> = y.iter().zip(&prob).map(|(&t, &p)| t as f64 - p).collect();
            let leaf = |idx: &[usize]| {
                let num: f64 = idx.iter().map(|&i| resid[i]).sum();
                let den: f64 = idx.iter().map(|&i| prob[i] * (1.0 - prob[i])).sum();
                if den.abs() < 1e-150 { 0.0 } else { num / den }
            };
            let mut imp = vec![0.0; data.p];
            let tree = fit_tree(&data, &resid, params, &mut imp, &leaf);
            normalize_into(&mut acc, &imp);
            for (i, r) in raw.iter_mut().enumerate() {
                *r += params.learning_rate * tree.predict_row(&x[i]);
            }
            stages.push(vec![tree]);
        }
        return Ok(GbtClassifier {
            classes,
            init: vec![init],
            learning_rate: params.learning_rate,
            stages,
            feature_importances: finalize_importance(acc),
        });
    }
    let init: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).max(1e-300).ln()).collect();
    let mut raw: Vec<Vec<f64>> = (0..n).map(|_| init.clone()).collect();
    let scale = (k as f64 - 1.0) / k as f64;
    for _ in 0..params.n_estimators {
        let prob: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let mut stage = Vec::with_capacity(k);
        for c in 0..k {
            let resid: Vec<f64> = (0..n).map(|i| (y[i] == c) as u8 as f64 - prob[i][c]).collect();
            let leaf = |idx: &[usize]| {
                let num: f64 = idx.iter().map(|&i| resid[i]).sum();
                let den: f64 = idx.iter().map(|&i| resid[i].abs() * (1.0 - resid[i].abs())).sum();
                if den.abs() < 1e-150 { 0.0 } else { scale * num / den }
            };
            let mut imp = vec![0.0; data.p];
            let tree = fit_tree(&data, &resid, params, &mut imp, &leaf);
            normalize_into(&mut acc, &imp);
            stage.push(tree);
        }
        for (i, r) in raw.iter_mut().enumerate() {
            for (c, t) in stage.iter().enumerate() {
                r[c] += params.learning_rate * t.predict_row(&x[i]);
            }
        }
        stages.push(stage);
    }
    Ok(GbtClassifier { classes, init, learning_rate: params.learning_rate, stages, feature_importances: finalize_importance(acc) })
}
