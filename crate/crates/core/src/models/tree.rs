//! Depth-limited CART trees over a shared row-major feature matrix.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchored_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Sum of squared deviations from the node mean.
    Variance,
    /// Count-weighted Gini impurity over classes {0, 1}.
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafValue {
    Mean(f64),
    /// Class frequencies `[P(0), P(1)]`.
    Classes([f64; 2]),
}

impl LeafValue {
    /// Regression mean, or positive-class probability.
    pub fn score(&self) -> f64 {
        match *self {
            LeafValue::Mean(v) => v,
            LeafValue::Classes([_, p1]) => p1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: LeafValue, n: usize },
}

/// Nodes stored in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: LeafValue) -> Self {
        Tree { nodes: vec![Node::Leaf { value, n: 0 }] }
    }

    pub fn leaf_for(&self, x: &[f64]) -> &LeafValue {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf_for(x).score()
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &LeafValue> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, .. } => Some(value),
            Node::Split { .. } => None,
        })
    }
}

/// Growth parameters for one tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features sampled per split; `>= n_features` disables sampling.
    pub max_features: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

pub struct TreeBuilder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<'a, R: Rng> TreeBuilder<'a, R> {
    pub fn new(x: &'a [Vec<f64>], y: &'a [f64], params: TreeParams, rng: &'a mut R) -> Self {
        TreeBuilder { x, y, params, rng, nodes: Vec::new() }
    }

    /// Grows a tree on `rows` (indices into `x`, repeats allowed).
    pub fn build(mut self, rows: Vec<usize>) -> Tree {
        self.grow(rows, 0);
        Tree { nodes: self.nodes }
    }

    fn leaf_value(&self, rows: &[usize]) -> LeafValue {
        match self.params.criterion {
            Criterion::Variance => LeafValue::Mean(anchored_mean(rows.iter().map(|&i| self.y[i]))),
            Criterion::Gini => {
                let ones = rows.iter().filter(|&&i| self.y[i] > 0.5).count();
                let p1 = ones as f64 / rows.len() as f64;
                LeafValue::Classes([1.0 - p1, p1])
            }
        }
    }

    fn impurity(&self, rows: &[usize]) -> f64 {
        match self.params.criterion {
            Criterion::Variance => {
                let m = anchored_mean(rows.iter().map(|&i| self.y[i]));
                rows.iter().map(|&i| (self.y[i] - m) * (self.y[i] - m)).sum()
            }
            Criterion::Gini => {
                let n = rows.len() as f64;
                let c1 = rows.iter().filter(|&&i| self.y[i] > 0.5).count() as f64;
                let c0 = n - c1;
                n - (c0 * c0 + c1 * c1) / n
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let value = self.leaf_value(&rows);
        self.nodes.push(Node::Leaf { value, n: rows.len() });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let parent = self.impurity(&rows);
        if parent <= 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows) else { return id };
        if !(split.impurity < parent) {
            return id;
        }
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.x[i][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left: l, right: r };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x[0].len();
        let k = self.params.max_features.clamp(1, p);
        if k >= p {
            return (0..p).collect();
        }
        let mut f = sample(self.rng, p, k).into_vec();
        f.sort_unstable();
        f
    }

    /// Lowest-impurity split over the candidate features. Ties keep the
    /// first found: lowest feature index, then lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let features = self.candidate_features();
        let min_leaf = self.params.min_leaf.max(1);
        let n = rows.len();
        let mut best: Option<Split> = None;
        let mut order = rows.to_vec();
        let center = anchored_mean(rows.iter().map(|&i| self.y[i]));
        for f in features {
            order.copy_from_slice(rows);
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let total: f64;
            let total_sq: f64;
            match self.params.criterion {
                Criterion::Variance => {
                    total = order.iter().map(|&i| self.y[i] - center).sum();
                    total_sq = order.iter().map(|&i| (self.y[i] - center).powi(2)).sum();
                }
                Criterion::Gini => {
                    total = order.iter().filter(|&&i| self.y[i] > 0.5).count() as f64;
                    total_sq = 0.0;
                }
            }
            let (mut s, mut sq) = (0.0, 0.0);
            for pos in 1..n {
                let prev = order[pos - 1];
                let yv = self.y[prev];
                match self.params.criterion {
                    Criterion::Variance => {
                        s += yv - center;
                        sq += (yv - center) * (yv - center);
                    }
                    Criterion::Gini => s += if yv > 0.5 { 1.0 } else { 0.0 },
                }
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[prev][f], self.x[order[pos]][f]);
                if !(lo < hi) {
                    continue;
                }
                let (nl, nr) = (pos as f64, (n - pos) as f64);
                let impurity = match self.params.criterion {
                    Criterion::Variance => {
                        let (sr, sqr) = (total - s, total_sq - sq);
                        (sq - s * s / nl).max(0.0) + (sqr - sr * sr / nr).max(0.0)
                    }
                    Criterion::Gini => {
                        let (l1, r1) = (s, total - s);
                        let (l0, r0) = (nl - l1, nr - r1);
                        (nl - (l0 * l0 + l1 * l1) / nl) + (nr - (r0 * r0 + r1 * r1) / nr)
                    }
                };
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Split { feature: f, threshold, impurity });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(criterion: Criterion, max_depth: usize) -> TreeParams {
        TreeParams { criterion, max_depth, min_leaf: 2, max_features: usize::MAX }
    }

    #[test]
    fn one_split_separates() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1, (i * 7 % 3) as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i >= 4 { 1.0 } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = TreeBuilder::new(&x, &y, params(Criterion::Gini, 1), &mut rng).build((0..10).collect());
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!((threshold - 0.35).abs() < 1e-12);
            }
            _ => panic!("root should split"),
        }
        for (r, &label) in x.iter().zip(&y) {
            assert_eq!(t.predict(r), label);
        }
    }

    #[test]
    fn regression_split_on_step() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = TreeBuilder::new(&x, &y, params(Criterion::Variance, 3), &mut rng).build((0..8).collect());
        // Pure children stop growing.
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict(&[0.0]), 1.0);
        assert_eq!(t.predict(&[7.0]), 5.0);
        assert_eq!(t.predict(&[3.5]), 1.0);
    }

    #[test]
    fn min_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..9).map(|i| if i == 0 { 10.0 } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = TreeBuilder::new(&x, &y, params(Criterion::Variance, 4), &mut rng).build((0..9).collect());
        for n in &t.nodes {
            if let Node::Leaf { n, .. } = n {
                assert!(*n >= 2);
            }
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Two identical columns: the split must use feature 0.
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = TreeBuilder::new(&x, &y, params(Criterion::Gini, 1), &mut rng).build((0..6).collect());
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn leaf_json_shape() {
        let t = Tree::leaf(LeafValue::Classes([0.25, 0.75]));
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"nodes":[{"type":"leaf","value":{"classes":[0.25,0.75]},"n":0}]}"#);
    }
}
