//! Linear-interpolation quantiles over order statistics.
//!
//! For sorted values `x[0..n]` and probability `p`, the position is
//! `h = (n - 1) * p` and the quantile is
//! `x[floor(h)] + (h - floor(h)) * (x[floor(h) + 1] - x[floor(h)])`.
//! Binning, cluster summaries and the attacker's equal-frequency bins all
//! use this one convention.

/// Sorts finite values ascending, dropping NaNs.
pub fn sorted_finite(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile of already-sorted data. Returns `None` for empty input.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let p = p.clamp(0.0, 1.0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return Some(sorted[n - 1]);
    }
    let frac = h - lo as f64;
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    // Equal neighbours must return the exact value so duplicate edges dedupe cleanly.
    if frac == 0.0 || a == b {
        Some(a)
    } else {
        Some(a + frac * (b - a))
    }
}

/// Quantiles at `i / n_parts` for `i = 0..=n_parts`, with exact duplicates removed.
pub fn dedup_quantile_edges(sorted: &[f64], n_parts: usize) -> Vec<f64> {
    let mut edges: Vec<f64> = Vec::with_capacity(n_parts + 1);
    for i in 0..=n_parts {
        let q = quantile_sorted(sorted, i as f64 / n_parts as f64).expect("non-empty input");
        if edges.last().is_none_or(|&last| q > last) {
            edges.push(q);
        }
    }
    edges
}
