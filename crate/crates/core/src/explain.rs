//! Exact additive feature attributions for tree ensembles.
//!
//! The value of a feature subset `S` is the path-dependent conditional
//! expectation of the margin: walking a tree, splits on features in `S`
//! follow the input, and splits on other features average both children
//! weighted by cover. Shapley values of that game are computed two ways:
//!
//! * [`tree_shap`]: the polynomial-time path algorithm, which tracks, for
//!   every unique feature on the current root-to-leaf path, the proportion of
//!   subsets that still reach the node.
//! * [`brute_force_shap`]: direct enumeration of every subset of the features
//!   the ensemble uses. Exponential; kept as an independent check.
//!
//! Attributions are in margin (log-odds) space, where they are exactly
//! additive: `base_value + Σ phi = predict_margin(x)`.

use crate::error::{Error, Result};
use crate::model::{Tree, TreeEnsemble, TreeNode};

/// Per-feature attributions for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapVector {
    pub phi: Vec<f64>,
    /// Cover-weighted expected margin.
    pub base_value: f64,
}

impl ShapVector {
    /// `base_value + Σ phi`; equals the margin up to rounding.
    pub fn total(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

/// Cover-weighted expectation of a subtree's output.
fn expected_value(nodes: &[TreeNode], i: usize) -> Result<f64> {
    match nodes[i] {
        TreeNode::Leaf { value, .. } => Ok(value),
        TreeNode::Split {
            left, right, cover, ..
        } => {
            if cover <= 0.0 {
                return Err(Error::Explain(format!("internal node {i} has zero cover")));
            }
            let l = expected_value(nodes, left)?;
            let r = expected_value(nodes, right)?;
            Ok((nodes[left].cover() * l + nodes[right].cover() * r) / cover)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: usize,
    /// Fraction of "feature absent" paths flowing through (cover ratio).
    zero_fraction: f64,
    /// 1 if the input follows this branch, else 0.
    one_fraction: f64,
    /// Permutation weight of subsets of each size.
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / d1;
    }
}

/// Removes element `index` from the path, undoing its extension.
fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * d1 / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight the path would have with element `index` removed.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walker<'a> {
    nodes: &'a [TreeNode],
    x: &'a [f64],
    phi: &'a mut [f64],
}

// Root sentinel; never credited.
const NO_FEATURE: usize = usize::MAX;

impl Walker<'_> {
    fn recurse(
        &mut self,
        node: usize,
        mut path: Vec<PathElement>,
        zero_fraction: f64,
        one_fraction: f64,
        feature: usize,
    ) -> Result<()> {
        extend_path(&mut path, zero_fraction, one_fraction, feature);
        match self.nodes[node] {
            TreeNode::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let el = path[i];
                    self.phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
            TreeNode::Split {
                feature: split_feature,
                threshold,
                left,
                right,
                cover,
            } => {
                if cover <= 0.0 {
                    return Err(Error::Explain(format!("internal node {node} has zero cover")));
                }
                let v = *self.x.get(split_feature).ok_or_else(|| {
                    Error::Explain(format!("feature index {split_feature} out of range"))
                })?;
                let (hot, cold) = if v < threshold { (left, right) } else { (right, left) };
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split_feature) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, k);
                }
                let hot_zero = self.nodes[hot].cover() / cover * incoming_zero;
                let cold_zero = self.nodes[cold].cover() / cover * incoming_zero;
                self.recurse(hot, path.clone(), hot_zero, incoming_one, split_feature)?;
                self.recurse(cold, path, cold_zero, 0.0, split_feature)?;
            }
        }
        Ok(())
    }
}

fn tree_shap_into(tree: &Tree, x: &[f64], phi: &mut [f64]) -> Result<()> {
    let mut walker = Walker {
        nodes: tree.nodes(),
        x,
        phi,
    };
    let path = Vec::with_capacity(tree.depth() + 2);
    walker.recurse(0, path, 1.0, 1.0, NO_FEATURE)
}

/// Exact Shapley values of the path-dependent value function, summed over
/// trees.
pub fn tree_shap(model: &TreeEnsemble, x: &[f64]) -> Result<ShapVector> {
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Explain(format!("non-finite input at feature {bad}")));
    }
    let mut phi = vec![0.0; x.len()];
    let mut base_value = model.base_margin;
    for tree in &model.trees {
        base_value += expected_value(tree.nodes(), 0)?;
        tree_shap_into(tree, x, &mut phi)?;
    }
    Ok(ShapVector { phi, base_value })
}

/// Conditional expectation of a subtree when only features in `known` (a bit
/// mask over `players`) follow the input.
fn conditional_value(
    nodes: &[TreeNode],
    i: usize,
    x: &[f64],
    players: &[usize],
    known: u32,
) -> Result<f64> {
    match nodes[i] {
        TreeNode::Leaf { value, .. } => Ok(value),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let slot = players
                .iter()
                .position(|&p| p == feature)
                .expect("players cover every split feature");
            if known & (1 << slot) != 0 {
                let v = *x.get(feature).ok_or_else(|| {
                    Error::Explain(format!("feature index {feature} out of range"))
                })?;
                let next = if v < threshold { left } else { right };
                conditional_value(nodes, next, x, players, known)
            } else {
                if cover <= 0.0 {
                    return Err(Error::Explain(format!("internal node {i} has zero cover")));
                }
                let l = conditional_value(nodes, left, x, players, known)?;
                let r = conditional_value(nodes, right, x, players, known)?;
                Ok((nodes[left].cover() * l + nodes[right].cover() * r) / cover)
            }
        }
    }
}

/// Shapley values by explicit enumeration of every subset of the features the
/// ensemble uses, with the same value function as [`tree_shap`]. Features the
/// ensemble never splits on are dummies and get exactly zero.
pub fn brute_force_shap(model: &TreeEnsemble, x: &[f64], max_features: usize) -> Result<ShapVector> {
    let players = model.used_features();
    let m = players.len();
    if m > max_features || m > 24 {
        return Err(Error::Explain(format!(
            "{m} active features exceed the enumeration limit of {max_features}"
        )));
    }
    if let Some(&f) = players.iter().find(|&&f| f >= x.len()) {
        return Err(Error::Explain(format!("feature index {f} out of range")));
    }

    let n_subsets = 1usize << m;
    let mut value = vec![model.base_margin; n_subsets];
    for (mask, v) in value.iter_mut().enumerate() {
        for tree in &model.trees {
            *v += conditional_value(tree.nodes(), 0, x, &players, mask as u32)?;
        }
    }

    // weight(s) = s! (m - s - 1)! / m!
    let mut factorial = vec![1.0f64; m + 1];
    for k in 1..=m {
        factorial[k] = factorial[k - 1] * k as f64;
    }
    let mut phi = vec![0.0; x.len()];
    for (slot, &feature) in players.iter().enumerate() {
        let bit = 1usize << slot;
        let mut total = 0.0;
        for mask in (0..n_subsets).filter(|mask| mask & bit == 0) {
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[m - s - 1] / factorial[m];
            total += weight * (value[mask | bit] - value[mask]);
        }
        phi[feature] = total;
    }
    Ok(ShapVector {
        phi,
        base_value: value[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;

    fn x_with(vals: &[(usize, f64)]) -> [f64; N_FEATURES] {
        let mut x = [0.0; N_FEATURES];
        for &(i, v) in vals {
            x[i] = v;
        }
        x
    }

    fn stump() -> TreeEnsemble {
        TreeEnsemble::new(
            vec![Tree::split(0, 0.5, Tree::leaf(0.0, 50.0), Tree::leaf(1.0, 50.0))],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn stump_attribution() {
        let x = x_with(&[(0, 0.7)]);
        for shap in [tree_shap(&stump(), &x).unwrap(), brute_force_shap(&stump(), &x, 12).unwrap()] {
            assert_eq!(shap.base_value, 0.5);
            assert_eq!(shap.phi[0], 0.5);
            assert!(shap.phi[1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn single_player_closed_form() {
        let m = TreeEnsemble::new(
            vec![Tree::split(3, 1.0, Tree::leaf(-2.0, 30.0), Tree::leaf(4.0, 10.0))],
            0.25,
        )
        .unwrap();
        let x = x_with(&[(3, -5.0)]);
        let shap = brute_force_shap(&m, &x, 12).unwrap();
        let fx = m.predict_margin(&x).unwrap();
        assert_eq!(shap.phi[3], fx - shap.base_value);
        // base = 0.25 + (30*-2 + 10*4)/40
        assert_eq!(shap.base_value, 0.25 - 0.5);
    }

    #[test]
    fn empty_ensemble() {
        let m = TreeEnsemble::new(vec![], 1.5).unwrap();
        let x = x_with(&[]);
        for shap in [tree_shap(&m, &x).unwrap(), brute_force_shap(&m, &x, 12).unwrap()] {
            assert_eq!(shap.base_value, 1.5);
            assert!(shap.phi.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn depth_two_unequal_covers_match_oracle() {
        // f0 then f1, with covers 10/30 and 5/25 below
        let tree = Tree::split(
            0,
            0.0,
            Tree::split(1, 0.0, Tree::leaf(1.0, 3.0), Tree::leaf(2.0, 7.0)),
            Tree::split(1, 1.0, Tree::leaf(-1.0, 20.0), Tree::leaf(5.0, 10.0)),
        );
        let m = TreeEnsemble::new(vec![tree], 0.0).unwrap();
        for x in [x_with(&[(0, -1.0), (1, 2.0)]), x_with(&[(0, 1.0), (1, 2.0)]), x_with(&[(0, 1.0), (1, 0.0)])] {
            let fast = tree_shap(&m, &x).unwrap();
            let slow = brute_force_shap(&m, &x, 12).unwrap();
            assert!((fast.base_value - slow.base_value).abs() < 1e-12);
            for (a, b) in fast.phi.iter().zip(&slow.phi) {
                assert!((a - b).abs() < 1e-12, "{:?} vs {:?}", fast.phi, slow.phi);
            }
            assert!((fast.total() - m.predict_margin(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_two_player_game() {
        // Same tree; x = (1, 0): path right at f0, then left at f1 (0 < 1).
        // v({})   = (10*1.7 + 30*1.0)/40 = 47/40
        //   left subtree E = (3*1 + 7*2)/10 = 1.7; right E = (20*-1 + 10*5)/30 = 1.0
        // v({0})  = 1.0
        // v({1})  = (10*2 + 30*-1)/40 = -0.25   (x1 = 0 -> left-subtree right leaf: 0 >= 0)
        // v({0,1}) = -1
        let tree = Tree::split(
            0,
            0.0,
            Tree::split(1, 0.0, Tree::leaf(1.0, 3.0), Tree::leaf(2.0, 7.0)),
            Tree::split(1, 1.0, Tree::leaf(-1.0, 20.0), Tree::leaf(5.0, 10.0)),
        );
        let m = TreeEnsemble::new(vec![tree], 0.0).unwrap();
        let x = x_with(&[(0, 1.0), (1, 0.0)]);
        let (v0, v_a, v_b, v_ab) = (47.0 / 40.0, 1.0, -0.25, -1.0);
        let phi0 = 0.5 * (v_a - v0) + 0.5 * (v_ab - v_b);
        let phi1 = 0.5 * (v_b - v0) + 0.5 * (v_ab - v_a);
        let fast = tree_shap(&m, &x).unwrap();
        assert!((fast.phi[0] - phi0).abs() < 1e-12);
        assert!((fast.phi[1] - phi1).abs() < 1e-12);
        assert!((fast.base_value - v0).abs() < 1e-12);
    }

    #[test]
    fn zero_cover_internal_node_is_an_error() {
        let m = TreeEnsemble::new(
            vec![Tree::split(0, 0.5, Tree::leaf(0.0, 0.0), Tree::leaf(1.0, 0.0))],
            0.0,
        )
        .unwrap();
        assert!(matches!(tree_shap(&m, &x_with(&[])), Err(Error::Explain(_))));
        assert!(matches!(brute_force_shap(&m, &x_with(&[]), 12), Err(Error::Explain(_))));
    }

    #[test]
    fn too_many_players() {
        let trees: Vec<Tree> = (0..13)
            .map(|f| Tree::split(f, 0.5, Tree::leaf(0.0, 1.0), Tree::leaf(1.0, 1.0)))
            .collect();
        let m = TreeEnsemble::new(trees, 0.0).unwrap();
        assert!(brute_force_shap(&m, &x_with(&[]), 12).is_err());
        assert!(brute_force_shap(&m, &x_with(&[]), 13).is_ok());
    }

    #[test]
    fn repeated_feature_on_path() {
        // f0 split twice on the same path exercises the unwind step
        let tree = Tree::split(
            0,
            0.0,
            Tree::leaf(-1.0, 4.0),
            Tree::split(
                2,
                1.0,
                Tree::split(0, 2.0, Tree::leaf(0.5, 3.0), Tree::leaf(3.0, 1.0)),
                Tree::leaf(1.0, 2.0),
            ),
        );
        let m = TreeEnsemble::new(vec![tree], 0.0).unwrap();
        for x in [x_with(&[(0, 1.0), (2, 0.0)]), x_with(&[(0, 5.0), (2, 0.0)]), x_with(&[(0, -1.0), (2, 3.0)])] {
            let fast = tree_shap(&m, &x).unwrap();
            let slow = brute_force_shap(&m, &x, 12).unwrap();
            for (a, b) in fast.phi.iter().zip(&slow.phi) {
                assert!((a - b).abs() < 1e-12, "{:?} vs {:?}", fast.phi, slow.phi);
            }
        }
    }
}
