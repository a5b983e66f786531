use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionrisk::explain::{brute_force_shap, tree_shap};
use regionrisk::features::N_FEATURES;
use regionrisk::model::{Tree, TreeEnsemble, TreeNode};

/// Random tree over `features`. Thresholds and inputs share a 1/16 grid so
/// ties at a threshold are exercised.
fn random_tree(rng: &mut ChaCha8Rng, features: &[usize], depth: usize) -> Tree {
    if depth == 0 || rng.random_bool(0.2) {
        return Tree::leaf(rng.random_range(-2.0..2.0), rng.random_range(0.5..20.0));
    }
    let f = features[rng.random_range(0..features.len())];
    let t = f64::from(rng.random_range(1..16)) / 16.0;
    let left = random_tree(rng, features, depth - 1);
    let right = random_tree(rng, features, depth - 1);
    Tree::split(f, t, left, right)
}

fn random_ensemble(seed: u64, n_features: usize) -> TreeEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // features drawn from anywhere in the registry
    let mut features: Vec<usize> = (0..N_FEATURES).collect();
    for i in 0..n_features {
        let j = rng.random_range(i..N_FEATURES);
        features.swap(i, j);
    }
    features.truncate(n_features);
    let n_trees = rng.random_range(1..8);
    let depth = rng.random_range(1..6);
    let trees = (0..n_trees).map(|_| random_tree(&mut rng, &features, depth)).collect();
    TreeEnsemble::new(trees, rng.random_range(-6.0..0.0)).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng) -> [f64; N_FEATURES] {
    let mut x = [0.0; N_FEATURES];
    for v in &mut x {
        *v = f64::from(rng.random_range(0..=16)) / 16.0;
    }
    x
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_subset_enumeration(seed in any::<u64>(), n_features in 1usize..=5) {
        let model = random_ensemble(seed, n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..10 {
            let x = random_input(&mut rng);
            let fast = tree_shap(&model, &x).unwrap();
            let slow = brute_force_shap(&model, &x, 5).unwrap();
            prop_assert!(max_diff(&fast.phi, &slow.phi) <= 1e-9);
            prop_assert!((fast.base_value - slow.base_value).abs() <= 1e-9);
        }
    }

    #[test]
    fn local_accuracy(seed in any::<u64>(), n_features in 1usize..=12) {
        let model = random_ensemble(seed, n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(7));
        let x = random_input(&mut rng);
        let s = tree_shap(&model, &x).unwrap();
        prop_assert!((s.total() - model.predict_margin(&x).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn unused_features_get_exactly_zero(seed in any::<u64>(), n_features in 1usize..=8) {
        let model = random_ensemble(seed, n_features);
        let used = model.used_features();
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let s = tree_shap(&model, &random_input(&mut rng)).unwrap();
        for f in (0..N_FEATURES).filter(|f| !used.contains(f)) {
            prop_assert_eq!(s.phi[f], 0.0);
        }
    }

    #[test]
    fn duplicating_trees_doubles_attributions(seed in any::<u64>(), n_features in 1usize..=6) {
        let model = random_ensemble(seed, n_features);
        let doubled_trees: Vec<Tree> = model.trees.iter().flat_map(|t| [t.clone(), t.clone()]).collect();
        let doubled = TreeEnsemble::new(doubled_trees, model.base_margin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
        let x = random_input(&mut rng);
        let a = tree_shap(&model, &x).unwrap();
        let b = tree_shap(&doubled, &x).unwrap();
        let twice: Vec<f64> = a.phi.iter().map(|p| 2.0 * p).collect();
        prop_assert!(max_diff(&b.phi, &twice) <= 1e-12);
        let expected_base = 2.0 * (a.base_value - model.base_margin) + model.base_margin;
        prop_assert!((b.base_value - expected_base).abs() <= 1e-12);
    }

    #[test]
    fn shifting_leaves_moves_only_the_base(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let model = random_ensemble(seed, 4);
        let nodes: Vec<TreeNode> = model.trees[0]
            .nodes()
            .iter()
            .map(|n| match *n {
                TreeNode::Leaf { value, cover } => TreeNode::Leaf { value: value + shift, cover },
                split => split,
            })
            .collect();
        let mut trees = model.trees.clone();
        trees[0] = Tree::from_nodes(nodes).unwrap();
        let shifted = TreeEnsemble::new(trees, model.base_margin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_input(&mut rng);
        let a = tree_shap(&model, &x).unwrap();
        let b = tree_shap(&shifted, &x).unwrap();
        prop_assert!(max_diff(&a.phi, &b.phi) <= 1e-12);
        prop_assert!((b.base_value - a.base_value - shift).abs() <= 1e-12);
    }
}

#[test]
fn brute_force_refuses_large_games() {
    let model = (0..)
        .map(|seed| random_ensemble(seed, 12))
        .find(|m| m.used_features().len() >= 3)
        .unwrap();
    let players = model.used_features().len();
    assert!(brute_force_shap(&model, &[0.5; N_FEATURES], players - 1).is_err());
}
