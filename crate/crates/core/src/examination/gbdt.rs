//! Gradient-boosted regression trees with logistic loss.
//!
//! Stagewise fitting: each tree is fit with squared-error splits to the
//! negative gradient of the log-loss (the click residual `y - p`), and leaf
//! values take a single Newton step `sum(residual) / sum(p (1 - p))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("training data contains a single class only")]
    SingleClass,
    #[error("empty training set")]
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { n_trees: 50, max_depth: 3, shrinkage: 0.1, min_leaf: 20 }
    }
}

/// Axis-aligned tree node. Leaves hold the additive log-odds value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { value: f64 },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub initial_log_odds: f64,
    pub shrinkage: f64,
    pub trees: Vec<TreeNode>,
    pub max_depth: usize,
}

impl GbdtModel {
    /// Summed raw score (log-odds).
    pub fn score(&self, x: &[f64]) -> f64 {
        self.initial_log_odds
            + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Predicted probability, sigmoid of the score; always in (0, 1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.score(x)).exp())
    }

    pub fn validate(&self) -> bool {
        self.trees.iter().all(|t| t.depth() <= self.max_depth)
            && self.trees.iter().all(|t| tree_finite(t))
            && self.initial_log_odds.is_finite()
    }
}

fn tree_finite(node: &TreeNode) -> bool {
    match node {
        TreeNode::Leaf { value } => value.is_finite(),
        TreeNode::Split { threshold, left, right, .. } => {
            threshold.is_finite() && tree_finite(left) && tree_finite(right)
        }
    }
}

pub fn log_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// Trains a boosted model on (features, binary label) rows. Deterministic
/// given input order.
pub fn gbdt_train(
    features: &[Vec<f64>],
    labels: &[f64],
    config: &GbdtConfig,
) -> Result<GbdtModel, GbdtError> {
    if features.is_empty() {
        return Err(GbdtError::Empty);
    }
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    if positives == 0 || positives == labels.len() {
        return Err(GbdtError::SingleClass);
    }
    let base_rate = positives as f64 / labels.len() as f64;
    let mut model = GbdtModel {
        initial_log_odds: (base_rate / (1.0 - base_rate)).ln(),
        shrinkage: config.shrinkage,
        trees: Vec::with_capacity(config.n_trees),
        max_depth: config.max_depth,
    };
    let mut scores = vec![model.initial_log_odds; labels.len()];
    let all: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.n_trees {
        let probs: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        let residuals: Vec<f64> = labels.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let hessians: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
        let tree = build_tree(features, &residuals, &hessians, &all, config.max_depth, config);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += config.shrinkage * tree.predict(&features[i]);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

fn leaf_value(residuals: &[f64], hessians: &[f64], idx: &[usize]) -> f64 {
    let num: f64 = idx.iter().map(|&i| residuals[i]).sum();
    let den: f64 = idx.iter().map(|&i| hessians[i]).sum::<f64>() + 1e-9;
    num / den
}

fn build_tree(
    features: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    idx: &[usize],
    depth_left: usize,
    config: &GbdtConfig,
) -> TreeNode {
    if depth_left == 0 || idx.len() < 2 * config.min_leaf {
        return TreeNode::Leaf { value: leaf_value(residuals, hessians, idx) };
    }
    let n_features = features[0].len();
    let total_sum: f64 = idx.iter().map(|&i| residuals[i]).sum();
    let total_n = idx.len() as f64;
    let parent_gain = total_sum * total_sum / total_n;

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)
    for f in 0..n_features {
        let mut sorted: Vec<usize> = idx.to_vec();
        sorted.sort_by(|&a, &b| features[a][f].partial_cmp(&features[b][f]).unwrap());
        let mut left_sum = 0.0;
        for (pos, &i) in sorted.iter().enumerate() {
            left_sum += residuals[i];
            let n_left = pos + 1;
            let n_right = idx.len() - n_left;
            if n_left < config.min_leaf || n_right < config.min_leaf {
                continue;
            }
            let here = features[i][f];
            let next = features[sorted[pos + 1]][f];
            if next <= here {
                continue; // no split point between equal values
            }
            let right_sum = total_sum - left_sum;
            let gain = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / n_right as f64
                - parent_gain;
            if best.map_or(gain > 1e-12, |(_, _, g)| gain > g) {
                best = Some((f, 0.5 * (here + next), gain));
            }
        }
    }
    match best {
        None => TreeNode::Leaf { value: leaf_value(residuals, hessians, idx) },
        Some((feature, threshold, _)) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| features[i][feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(build_tree(
                    features,
                    residuals,
                    hessians,
                    &left_idx,
                    depth_left - 1,
                    config,
                )),
                right: Box::new(build_tree(
                    features,
                    residuals,
                    hessians,
                    &right_idx,
                    depth_left - 1,
                    config,
                )),
            }
        }
    }
}

/// Mean training log-loss per boosting stage (stage 0 is the prior-only
/// model); nonincreasing on the training set.
pub fn staged_log_loss(model: &GbdtModel, features: &[Vec<f64>], labels: &[f64]) -> Vec<f64> {
    let mut scores = vec![model.initial_log_odds; labels.len()];
    let mut out = Vec::with_capacity(model.trees.len() + 1);
    let mean_loss = |scores: &[f64]| {
        scores
            .iter()
            .zip(labels)
            .map(|(s, y)| log_loss(1.0 / (1.0 + (-s).exp()), *y))
            .sum::<f64>()
            / labels.len() as f64
    };
    out.push(mean_loss(&scores));
    for tree in &model.trees {
        for (i, s) in scores.iter_mut().enumerate() {
            *s += model.shrinkage * tree.predict(&features[i]);
        }
        out.push(mean_loss(&scores));
    }
    out
}
