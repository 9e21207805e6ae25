//! Bagged random forests for regression and binary classification.
//!
//! Tree `i` draws its bootstrap sample and feature subsets from a generator
//! seeded with `seed + i`, over rows held in a canonical (sorted) order, so
//! a fitted forest does not depend on worker count or input row order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Criterion, LeafValue, Tree, TreeBuilder, TreeParams};
use super::{anchored_mean, check_matrix, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features sampled per split; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
    /// Draw a same-size bootstrap resample per tree; otherwise every tree
    /// sees all rows once.
    pub bootstrap: bool,
    /// Worker cap for training; not part of the fitted model.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, min_leaf: 2, max_features: None, bootstrap: true, threads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub kind: ForestKind,
    pub depth_limit: usize,
    pub seed: u64,
    pub n_features: usize,
    pub config: ForestConfig,
    /// Training target range; regression predictions stay inside it.
    pub target_range: (f64, f64),
    pub trees: Vec<Tree>,
}

/// Permutation that sorts rows by their features, then target.
fn canonical_order(x: &[Vec<f64>], target: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(target[a].total_cmp(&target[b]))
    });
    idx
}

/// Runs `f` on a pool capped at `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ModelError> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| ModelError::ThreadPool(e.to_string())),
        None => Ok(f()),
    }
}

pub fn fit_forest(
    x: &[Vec<f64>],
    target: &[f64],
    kind: ForestKind,
    depth_limit: usize,
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, ModelError> {
    let p = check_matrix(x, target.len())?;
    if depth_limit < 1 {
        return Err(ModelError::InvalidDepth(depth_limit));
    }
    if target.iter().any(|t| !t.is_finite()) {
        return Err(ModelError::NonFinite("target"));
    }
    if kind == ForestKind::Classification {
        if let Some(&bad) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(ModelError::InvalidLabel(bad));
        }
    }
    let order = canonical_order(x, target);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| target[i]).collect();
    let n = xs.len();
    let params = TreeParams {
        criterion: match kind {
            ForestKind::Regression => Criterion::Variance,
            ForestKind::Classification => Criterion::Gini,
        },
        max_depth: depth_limit,
        min_leaf: config.min_leaf,
        max_features: config.max_features.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize),
    };
    let grow = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let rows: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        TreeBuilder::new(&xs, &ys, params, &mut rng).build(rows)
    };
    let trees = with_threads(config.threads, || (0..config.n_trees).into_par_iter().map(grow).collect())?;
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        kind,
        depth_limit,
        seed,
        n_features: p,
        config: ForestConfig { threads: None, ..config.clone() },
        target_range: (lo, hi),
        trees,
    })
}

/// Mean of tree outputs: the target estimate for regression, the
/// positive-class probability for classification.
pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<f64, ModelError> {
    if x.len() != model.n_features {
        return Err(ModelError::DimensionMismatch { expected: model.n_features, got: x.len() });
    }
    let m = anchored_mean(model.trees.iter().map(|t| t.predict(x)));
    Ok(match model.kind {
        ForestKind::Regression => m.clamp(model.target_range.0, model.target_range.1),
        ForestKind::Classification => m.clamp(0.0, 1.0),
    })
}

impl ForestModel {
    /// Forest over hand-built trees, for fixtures and tests.
    pub fn from_trees(kind: ForestKind, n_features: usize, trees: Vec<Tree>) -> Self {
        let scores: Vec<f64> = trees.iter().flat_map(|t| t.leaves().map(LeafValue::score).collect::<Vec<_>>()).collect();
        let (lo, hi) = match kind {
            ForestKind::Classification => (0.0, 1.0),
            ForestKind::Regression => (
                scores.iter().copied().fold(f64::INFINITY, f64::min),
                scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        };
        let depth_limit = trees.iter().map(Tree::depth).max().unwrap_or(0).max(1);
        ForestModel {
            kind,
            depth_limit,
            seed: 0,
            n_features,
            config: ForestConfig { n_trees: trees.len(), ..ForestConfig::default() },
            target_range: (lo, hi),
            trees,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tree::Node;

    fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..100.0)).collect()).collect();
        let y = x.iter().map(|r| 200.0 + r[0] - 0.5 * r[2] + rng.random_range(-5.0..5.0)).collect();
        (x, y)
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = data(50, 1);
        let y = vec![0.1 + 0.2; 50];
        let f = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig::default(), 5).unwrap();
        for r in &x {
            assert_eq!(predict_forest(&f, r).unwrap(), 0.1 + 0.2);
        }
        for t in &f.trees {
            assert!(t.leaves().all(|l| *l == LeafValue::Mean(0.1 + 0.2)));
        }
    }

    #[test]
    fn single_tree_depth_one_separates() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| if i < 12 { 0.0 } else { 1.0 }).collect();
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..ForestConfig::default() };
        let f = fit_forest(&x, &y, ForestKind::Classification, 1, &cfg, 3).unwrap();
        assert_eq!(f.trees[0].depth(), 1);
        let Node::Split { threshold, .. } = f.trees[0].nodes[0] else { panic!("no split") };
        assert_eq!(threshold, 11.5);
        let acc = x.iter().zip(&y).filter(|(r, &l)| (predict_forest(&f, r).unwrap() >= 0.5) == (l == 1.0)).count();
        assert_eq!(acc, 30);
    }

    #[test]
    fn depth_and_probability_invariants() {
        let (x, y) = data(300, 2);
        let labels: Vec<f64> = y.iter().map(|v| if *v < 220.0 { 1.0 } else { 0.0 }).collect();
        let f = fit_forest(&x, &labels, ForestKind::Classification, 3, &ForestConfig::default(), 9).unwrap();
        assert_eq!(f.trees.len(), 100);
        for t in &f.trees {
            assert!(t.depth() <= 3);
            for l in t.leaves() {
                let LeafValue::Classes([a, b]) = l else { panic!() };
                assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
        for r in &x {
            let p = predict_forest(&f, r).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn regression_within_target_range() {
        let (x, y) = data(200, 4);
        let f = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig::default(), 1).unwrap();
        let (lo, hi) = (y.iter().copied().fold(f64::MAX, f64::min), y.iter().copied().fold(f64::MIN, f64::max));
        for r in x.iter().chain([vec![-1e9; 4], vec![1e9; 4]].iter()) {
            let v = predict_forest(&f, r).unwrap();
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn hand_forest_averages() {
        let trees = vec![Tree::leaf(LeafValue::Mean(100.0)), Tree::leaf(LeafValue::Mean(300.0))];
        let f = ForestModel::from_trees(ForestKind::Regression, 2, trees);
        assert_eq!(predict_forest(&f, &[0.0, 0.0]).unwrap(), 200.0);
        assert!(predict_forest(&f, &[0.0]).is_err());
    }

    #[test]
    fn identical_trees_equal_single_tree() {
        let (x, y) = data(80, 6);
        let one = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig { n_trees: 1, ..Default::default() }, 2).unwrap();
        let copies = ForestModel { trees: vec![one.trees[0].clone(); 7], ..one.clone() };
        for r in &x {
            assert_eq!(predict_forest(&copies, r).unwrap(), one.trees[0].predict(r));
        }
    }

    #[test]
    fn worker_count_does_not_change_model() {
        let (x, y) = data(200, 8);
        let a = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig { threads: Some(1), ..Default::default() }, 42).unwrap();
        let b = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig { threads: Some(8), ..Default::default() }, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn row_order_does_not_change_model() {
        let (x, y) = data(150, 10);
        let a = fit_forest(&x, &y, ForestKind::Regression, 3, &ForestConfig::default(), 7).unwrap();
        let mut perm: Vec<usize> = (0..150).collect();
        perm.reverse();
        perm.swap(3, 77);
        let xp: Vec<_> = perm.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<_> = perm.iter().map(|&i| y[i]).collect();
        let b = fit_forest(&xp, &yp, ForestKind::Regression, 3, &ForestConfig::default(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        assert_eq!(fit_forest(&[], &[], ForestKind::Regression, 3, &ForestConfig::default(), 0), Err(ModelError::Empty));
        let x = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            fit_forest(&x, &[0.0, 1.0], ForestKind::Regression, 0, &ForestConfig::default(), 0),
            Err(ModelError::InvalidDepth(0))
        );
        assert_eq!(
            fit_forest(&x, &[0.0, 2.0], ForestKind::Classification, 1, &ForestConfig::default(), 0),
            Err(ModelError::InvalidLabel(2.0))
        );
    }
}
