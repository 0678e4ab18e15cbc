#![allow(dead_code)]

use jit_anon::rng::SeededStream;
use jit_anon::utility::{train_random_forest, Dataset, Node, RFHyperparams};

/// Weighted Gini of the partition at `t`, computed from scratch.
pub fn split_impurity(values: &[f64], labels: &[bool], t: f64) -> f64 {
    let gini = |ys: &[bool]| {
        if ys.is_empty() {
            return 0.0;
        }
        let p = ys.iter().filter(|&&y| y).count() as f64 / ys.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let left: Vec<bool> = values.iter().zip(labels).filter(|(v, _)| **v <= t).map(|(_, y)| *y).collect();
    let right: Vec<bool> = values.iter().zip(labels).filter(|(v, _)| **v > t).map(|(_, y)| *y).collect();
    let n = values.len() as f64;
    (left.len() as f64 * gini(&left) + right.len() as f64 * gini(&right)) / n
}

/// Every midpoint between consecutive distinct values; smallest impurity, ties to the smallest threshold.
pub fn brute_force_stump(values: &[f64], labels: &[bool]) -> Option<(f64, f64)> {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let imp = split_impurity(values, labels, t);
        if best.is_none_or(|(_, b)| imp < b - 1e-12) {
            best = Some((t, imp));
        }
    }
    best
}

pub fn fixture(seed: u64, d: usize) -> Dataset {
    let mut s = SeededStream::new(seed);
    let n = 10 + s.next_below(50);
    let cut = s.next_f64();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        // One decimal so duplicate values occur.
        let row: Vec<f64> = (0..d).map(|_| (s.next_f64() * 10.0).round() / 10.0).collect();
        y.push((row[0] > cut) ^ (s.next_f64() < 0.2));
        x.push(row);
    }
    Dataset::new(x, y).unwrap()
}

pub fn stump(data: &Dataset, seed: u64) -> (Vec<usize>, Option<(usize, f64)>) {
    let hp = RFHyperparams { n_trees: 1, max_depth: 1, max_features_per_split: data.n_features(), rng_seed: seed, ..RFHyperparams::default() };
    let forest = train_random_forest(data, &hp).unwrap();
    let root = match &forest.trees[0].nodes[0] {
        Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
        Node::Leaf { .. } => None,
    };
    (forest.samples[0].clone(), root)
}

/// Compares root splits of one-feature stumps against [`brute_force_stump`];
/// returns how many non-trivial fixtures were checked.
pub fn check_stumps(seeds: std::ops::Range<u64>) -> Result<usize, String> {
    let mut checked = 0;
    for seed in seeds {
        let data = fixture(seed, 1);
        let (rows, root) = stump(&data, seed);
        let values: Vec<f64> = rows.iter().map(|&i| data.x[i][0]).collect();
        let labels: Vec<bool> = rows.iter().map(|&i| data.y[i]).collect();
        let pure = labels.iter().all(|&l| l == labels[0]);
        match (brute_force_stump(&values, &labels), root) {
            (Some((t, _)), Some((0, got))) if !pure => {
                if got != t {
                    return Err(format!("seed {seed}: threshold {got}, brute force {t}"));
                }
                checked += 1;
            }
            (_, None) if pure || values.iter().all(|&v| v == values[0]) => {}
            other => return Err(format!("seed {seed}: {other:?}")),
        }
    }
    Ok(checked)
}
