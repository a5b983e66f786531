//! Boosted regression trees with a logistic link.
//!
//! A [`TreeEnsemble`] is an ordered list of trees plus a base margin. The
//! margin (log-odds) of an input is the base margin plus the leaf reached in
//! every tree; routing sends `x[f] < threshold` left and everything else
//! right. Every node records its cover (training hessian mass), which the
//! explainer uses as conditional weights.

mod file;
mod train;

use serde::{Deserialize, Serialize};

pub use file::{load_model, parse_model, save_model, to_model_text, MODEL_FORMAT_VERSION};
pub use train::{train, train_with_history, Dataset, TrainParams};

use crate::error::{Error, Result};
use crate::features::{N_FEATURES, REGISTRY_VERSION};
use crate::sigmoid;

/// Factor turning a probability into expected deaths per 10,000 people.
pub const SCORE_SCALE: f64 = 10_000.0;

/// Recursion guard for files from elsewhere; trained trees are much shallower.
pub const MAX_TREE_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match *self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => cover,
        }
    }
}

/// One regression tree stored in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value, cover }],
        }
    }

    /// Joins two subtrees under a new root; the root's cover is the sum of the
    /// children's.
    pub fn split(feature: usize, threshold: f64, left: Tree, right: Tree) -> Self {
        let cover = left.nodes[0].cover() + right.nodes[0].cover();
        let offset_left = 1;
        let offset_right = 1 + left.nodes.len();
        let mut nodes = Vec::with_capacity(1 + left.nodes.len() + right.nodes.len());
        nodes.push(TreeNode::Split {
            feature,
            threshold,
            left: offset_left,
            right: offset_right,
            cover,
        });
        for (sub, offset) in [(left, offset_left), (right, offset_right)] {
            nodes.extend(sub.nodes.into_iter().map(|n| match n {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => TreeNode::Split {
                    feature,
                    threshold,
                    left: left + offset,
                    right: right + offset,
                    cover,
                },
                leaf => leaf,
            }));
        }
        Self { nodes }
    }

    /// Validates a pre-order node list.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Model("tree has no nodes".into()));
        }
        let tree = Self { nodes };
        let mut next = 0usize;
        tree.check_subtree(0, 0, &mut next)?;
        if next != tree.nodes.len() {
            return Err(Error::Model("unreachable nodes in tree".into()));
        }
        Ok(tree)
    }

    fn check_subtree(&self, idx: usize, depth: usize, next: &mut usize) -> Result<()> {
        if idx != *next {
            return Err(Error::Model(format!("node {idx} is not in pre-order position {next}")));
        }
        if depth > MAX_TREE_DEPTH {
            return Err(Error::Model("tree exceeds maximum depth".into()));
        }
        *next += 1;
        match self.nodes[idx] {
            TreeNode::Leaf { value, cover } => {
                if !value.is_finite() {
                    return Err(Error::Model(format!("non-finite leaf value at node {idx}")));
                }
                if !(cover >= 0.0 && cover.is_finite()) {
                    return Err(Error::Model(format!("invalid cover at node {idx}")));
                }
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                cover,
            } => {
                if feature >= N_FEATURES {
                    return Err(Error::Model(format!(
                        "feature index {feature} out of range at node {idx}"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::Model(format!("non-finite threshold at node {idx}")));
                }
                if left >= self.nodes.len() || right >= self.nodes.len() {
                    return Err(Error::Model(format!("child index out of range at node {idx}")));
                }
                self.check_subtree(left, depth + 1, next)?;
                self.check_subtree(right, depth + 1, next)?;
                let sum = self.nodes[left].cover() + self.nodes[right].cover();
                if cover.is_nan() || cover < 0.0 || (cover - sum).abs() > 1e-9 * sum.abs().max(1.0) {
                    return Err(Error::Model(format!(
                        "cover {cover} at node {idx} differs from children sum {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return Ok(i),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let v = *x.get(feature).ok_or_else(|| {
                        Error::Model(format!(
                            "feature index {feature} out of range for a {}-element input",
                            x.len()
                        ))
                    })?;
                    i = if v < threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self.nodes[self.leaf_index(x)?] {
            TreeNode::Leaf { value, .. } => Ok(value),
            TreeNode::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Features used by any split.
    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub base_margin: f64,
    pub registry_version: String,
}

impl TreeEnsemble {
    /// Ensemble bound to the current feature registry.
    pub fn new(trees: Vec<Tree>, base_margin: f64) -> Result<Self> {
        if !base_margin.is_finite() {
            return Err(Error::Model("non-finite base margin".into()));
        }
        Ok(Self {
            trees,
            base_margin,
            registry_version: REGISTRY_VERSION.to_string(),
        })
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite input at feature {bad}")));
        }
        let mut margin = self.base_margin;
        for t in &self.trees {
            margin += t.predict(x)?;
        }
        Ok(margin)
    }

    pub fn predict_probability(&self, x: &[f64]) -> Result<f64> {
        self.predict_margin(x).map(sigmoid)
    }

    /// Sorted, de-duplicated features used anywhere in the ensemble.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.trees.iter().flat_map(Tree::used_features).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Probability × 10,000: expected deaths per 10,000 people.
pub fn scale_score(probability: f64) -> f64 {
    probability * SCORE_SCALE
}
