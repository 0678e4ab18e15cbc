//! Bootstrap-aggregated Gini decision trees.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{child_seed, SeededStream};

use super::{Dataset, UtilityError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RFHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features_per_split: usize,
    pub split_criterion: SplitCriterion,
    pub bootstrap: bool,
    pub rng_seed: u64,
}

impl Default for RFHyperparams {
    fn default() -> Self {
        Self {
            n_trees: 1400,
            max_depth: 100,
            max_features_per_split: 1,
            split_criterion: SplitCriterion::Gini,
            bootstrap: true,
            rng_seed: 0,
        }
    }
}

impl RFHyperparams {
    pub fn validate(&self, n_features: usize) -> Result<(), UtilityError> {
        if self.n_trees == 0 {
            return Err(UtilityError::InvalidHyperparams("n_trees must be at least 1".into()));
        }
        if self.max_features_per_split == 0 || self.max_features_per_split > n_features {
            return Err(UtilityError::InvalidHyperparams(format!(
                "max_features_per_split must lie in 1..={n_features}, got {}",
                self.max_features_per_split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: bool },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

/// Sum of squared class proportions weighted by size, as an exact fraction
/// `num / den`. Larger means a purer split; equal to minimizing weighted Gini.
fn purity(pl: u64, nl: u64, pr: u64, nr: u64) -> (u128, u128) {
    let sq = |p: u64, n: u64| (p as u128).pow(2) + ((n - p) as u128).pow(2);
    (sq(pl, nl) * nr as u128 + sq(pr, nr) * nl as u128, nl as u128 * nr as u128)
}

fn gini(pos: u64, n: u64) -> f64 {
    let p = pos as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

/// Best threshold on one feature by Gini gain; ties go to the smallest threshold.
/// Returns `(threshold, gain)`, or `None` when all values are equal.
pub fn best_gini_split(pairs: &mut [(f64, bool)]) -> Option<(f64, f64)> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len() as u64;
    let total_pos = pairs.iter().filter(|p| p.1).count() as u64;
    let mut best: Option<(usize, (u128, u128), u64)> = None;
    let mut pos_left = 0u64;
    for i in 1..pairs.len() {
        pos_left += u64::from(pairs[i - 1].1);
        if pairs[i].0 == pairs[i - 1].0 {
            continue;
        }
        let nl = i as u64;
        let score = purity(pos_left, nl, total_pos - pos_left, n - nl);
        let better = match best {
            None => true,
            Some((_, (bn, bd), _)) => score.0 * bd > bn * score.1,
        };
        if better {
            best = Some((i, score, pos_left));
        }
    }
    best.map(|(i, _, pl)| {
        let (a, b) = (pairs[i - 1].0, pairs[i].0);
        let mut threshold = a + (b - a) / 2.0;
        if threshold >= b {
            threshold = a;
        }
        let nl = i as u64;
        let weighted = (nl as f64 * gini(pl, nl) + (n - nl) as f64 * gini(total_pos - pl, n - nl)) / n as f64;
        (threshold, gini(total_pos, n) - weighted)
    })
}

struct Builder<'a> {
    data: &'a Dataset,
    max_depth: usize,
    max_features: usize,
    stream: SeededStream,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|&&r| self.data.y[r]).count();
        self.nodes.push(Node::Leaf { value: pos * 2 > rows.len() });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let pos = rows.iter().filter(|&&r| self.data.y[r]).count();
        if depth >= self.max_depth || rows.len() < 2 || pos == 0 || pos == rows.len() {
            return self.leaf(&rows);
        }
        let d = self.data.n_features();
        let mut order: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            order.swap(i, self.stream.next_below(i + 1));
        }
        // Keep drawing features until enough non-constant ones have been evaluated.
        let mut evaluated = 0;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs = Vec::with_capacity(rows.len());
        for f in order {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.data.x[r][f], self.data.y[r])));
            if let Some((threshold, gain)) = best_gini_split(&mut pairs) {
                evaluated += 1;
                if best.is_none_or(|b| gain > b.2) {
                    best = Some((f, threshold, gain));
                }
                if evaluated == self.max_features {
                    break;
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return self.leaf(&rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| self.data.x[r][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: false });
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

impl DecisionTree {
    /// Fits on `rows` of `data` (duplicates allowed, as in a bootstrap sample).
    pub fn fit(data: &Dataset, rows: Vec<usize>, max_depth: usize, max_features: usize, seed: u64) -> Self {
        let mut b = Builder { data, max_depth, max_features, stream: SeededStream::new(seed), nodes: Vec::new() };
        b.build(rows, 0);
        DecisionTree { nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    /// Training rows drawn for each tree.
    pub samples: Vec<Vec<usize>>,
}

impl RandomForest {
    /// Majority vote; a tie predicts the negative class.
    pub fn predict(&self, x: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes * 2 > self.trees.len()
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Vec<bool> {
        x.par_iter().map(|r| self.predict(r)).collect()
    }

    /// Vote of the trees that did not see row `i` during training.
    pub fn oob_prediction(&self, data: &Dataset, i: usize) -> Option<bool> {
        let trees: Vec<&DecisionTree> =
            self.trees.iter().zip(&self.samples).filter(|(_, s)| !s.contains(&i)).map(|(t, _)| t).collect();
        if trees.is_empty() {
            return None;
        }
        let votes = trees.iter().filter(|t| t.predict(&data.x[i])).count();
        Some(votes * 2 > trees.len())
    }
}

pub fn train_random_forest(data: &Dataset, hp: &RFHyperparams) -> Result<RandomForest, UtilityError> {
    if data.is_empty() {
        return Err(UtilityError::EmptyTrainingSet);
    }
    hp.validate(data.n_features())?;
    let n = data.len();
    let fitted: Vec<(DecisionTree, Vec<usize>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = child_seed(hp.rng_seed, t as u64);
            let rows: Vec<usize> = if hp.bootstrap {
                let mut s = SeededStream::new(seed);
                (0..n).map(|_| s.next_below(n)).collect()
            } else {
                (0..n).collect()
            };
            let tree = DecisionTree::fit(data, rows.clone(), hp.max_depth, hp.max_features_per_split, child_seed(seed, 1));
            (tree, rows)
        })
        .collect();
    let (trees, samples) = fitted.into_iter().unzip();
    Ok(RandomForest { trees, samples })
}
