use crate::rng::SeededStream;

use super::Dataset;

/// Output of [`smote_enn`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub data: Dataset,
    pub synthesized: usize,
    pub removed: usize,
    /// Fewer than two minority rows (or a single class): the input came back unchanged.
    pub degenerate: bool,
}

/// Per-feature `(min, range)`; constant features get range 1.
fn fit_minmax(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = x.first().map_or(0, Vec::len);
    (0..d)
        .map(|j| {
            let lo = x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            (lo, if range > 0.0 { range } else { 1.0 })
        })
        .collect()
}

fn scale(x: &[Vec<f64>], s: &[(f64, f64)]) -> Vec<Vec<f64>> {
    x.iter().map(|r| r.iter().zip(s).map(|(v, (lo, range))| (v - lo) / range).collect()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest points of `pool` to `pool[i]`, excluding `i`. Ties go to the lower index.
fn nearest(points: &[Vec<f64>], pool: &[usize], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = pool.iter().filter(|&&j| j != i).map(|&j| (sq_dist(&points[i], &points[j]), j)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

fn minority_label(y: &[bool]) -> Option<(bool, usize, usize)> {
    let pos = y.iter().filter(|&&b| b).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(if pos <= neg { (true, pos, neg) } else { (false, neg, pos) })
}

/// Oversamples the minority class until both classes have equal counts.
///
/// Each synthetic point picks a random minority base, one of its `k` nearest
/// minority neighbours (min-max scaled Euclidean) and a uniform gap, and is
/// placed on the segment between them in original coordinates. Returns `None`
/// when the minority has fewer than two rows.
pub fn smote(data: &Dataset, k: usize, stream: &mut SeededStream) -> Option<Dataset> {
    let (label, n_min, n_maj) = minority_label(&data.y)?;
    if n_min < 2 {
        return None;
    }
    let scaled = scale(&data.x, &fit_minmax(&data.x));
    let minority: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == label).collect();
    let neighbours: Vec<Vec<usize>> = minority.iter().map(|&i| nearest(&scaled, &minority, i, k)).collect();

    let mut out = data.clone();
    for _ in 0..n_maj - n_min {
        let b = stream.next_below(minority.len());
        let nb = &neighbours[b];
        let n = nb[stream.next_below(nb.len())];
        let gap = stream.next_f64();
        let base = &data.x[minority[b]];
        let point = base.iter().zip(&data.x[n]).map(|(a, c)| a + gap * (c - a)).collect();
        out.x.push(point);
        out.y.push(label);
    }
    Some(out)
}

/// Edited nearest neighbours: drops every point whose `k` nearest neighbours
/// (all classes, min-max scaled) have a majority label different from its own.
pub fn enn(data: &Dataset, k: usize) -> Dataset {
    let scaled = scale(&data.x, &fit_minmax(&data.x));
    let all: Vec<usize> = (0..data.len()).collect();
    let keep: Vec<bool> = (0..data.len())
        .map(|i| {
            let nb = nearest(&scaled, &all, i, k);
            let agree = nb.iter().filter(|&&j| data.y[j] == data.y[i]).count();
            agree * 2 >= nb.len()
        })
        .collect();
    let mut out = Dataset::default();
    for i in (0..data.len()).filter(|&i| keep[i]) {
        out.x.push(data.x[i].clone());
        out.y.push(data.y[i]);
    }
    out
}

pub fn smote_enn(data: &Dataset, k_smote: usize, k_enn: usize, seed: u64) -> Resampled {
    let mut stream = SeededStream::new(seed);
    match smote(data, k_smote, &mut stream) {
        None => Resampled { data: data.clone(), synthesized: 0, removed: 0, degenerate: true },
        Some(over) => {
            let cleaned = enn(&over, k_enn);
            Resampled {
                synthesized: over.len() - data.len(),
                removed: over.len() - cleaned.len(),
                data: cleaned,
                degenerate: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustered(n_pos: usize, n_neg: usize, seed: u64) -> Dataset {
        let mut s = SeededStream::new(seed);
        let mut d = Dataset::default();
        for i in 0..n_pos + n_neg {
            let pos = i < n_pos;
            let c = if pos { 10.0 } else { 0.0 };
            d.x.push(vec![c + s.next_f64(), c + s.next_f64()]);
            d.y.push(pos);
        }
        d
    }

    #[test]
    fn balanced_clean_data_untouched() {
        let d = clustered(50, 50, 1);
        let r = smote_enn(&d, 5, 3, 7);
        assert_eq!((r.synthesized, r.removed, r.degenerate), (0, 0, false));
        assert_eq!(r.data, d);
    }

    #[test]
    fn ten_vs_ninety_balances() {
        let d = clustered(10, 90, 2);
        let over = smote(&d, 5, &mut SeededStream::new(3)).unwrap();
        assert_eq!(over.positives(), 90);
        assert_eq!(over.len(), 180);
    }

    #[test]
    fn synthetic_points_lie_between_pairs() {
        let d = clustered(6, 40, 4);
        let over = smote(&d, 5, &mut SeededStream::new(5)).unwrap();
        let lo: Vec<f64> = (0..2).map(|j| d.x[..6].iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..2).map(|j| d.x[..6].iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        for p in &over.x[d.len()..] {
            for j in 0..2 {
                assert!(p[j] >= lo[j] - 1e-12 && p[j] <= hi[j] + 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_minority() {
        let d = clustered(1, 20, 6);
        let r = smote_enn(&d, 5, 3, 1);
        assert!(r.degenerate);
        assert_eq!(r.data, d);
        let single = clustered(0, 5, 6);
        assert!(smote_enn(&single, 5, 3, 1).degenerate);
    }

    #[test]
    fn enn_matches_brute_force_on_noisy_grid() {
        let mut d = Dataset::default();
        let mut s = SeededStream::new(9);
        for i in 0..12 {
            for j in 0..12 {
                // Small jitter breaks distance ties so the oracle is unambiguous.
                d.x.push(vec![i as f64 + 0.01 * s.next_f64(), j as f64 + 0.01 * s.next_f64()]);
                d.y.push((i + j) % 3 == 0 || s.next_f64() < 0.15);
            }
        }
        let n = d.len();
        let axis = |k: usize| {
            let lo = d.x.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = d.x.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        };
        let (ax, ay) = (axis(0), axis(1));
        let unit: Vec<(f64, f64)> = d.x.iter().map(|r| ((r[0] - ax.0) / ax.1, (r[1] - ay.0) / ay.1)).collect();
        let expected: Vec<usize> = (0..n)
            .filter(|&i| {
                let mut dist: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| ((unit[i].0 - unit[j].0).hypot(unit[i].1 - unit[j].1), j)).collect();
                dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let same = dist[..3].iter().filter(|(_, j)| d.y[*j] == d.y[i]).count();
                same >= 2
            })
            .collect();
        let kept = enn(&d, 3);
        assert!(kept.len() < n);
        assert_eq!(kept.len(), expected.len());
        for (k, &i) in expected.iter().enumerate() {
            assert_eq!(kept.x[k], d.x[i]);
        }
    }

    #[test]
    fn enn_keeps_unanimous_points() {
        let d = clustered(30, 30, 11);
        assert_eq!(enn(&d, 3).len(), 60);
    }

    #[test]
    fn deterministic() {
        let d = clustered(12, 70, 12);
        assert_eq!(smote_enn(&d, 5, 3, 42), smote_enn(&d, 5, 3, 42));
    }
}
