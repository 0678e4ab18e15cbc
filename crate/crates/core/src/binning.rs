//! Quantile binning of quasi-identifiers and deterministic cluster assignment.
//!
//! Each commit is hashed (FNV-1a 64 over its id) onto one primary QID, then
//! placed in that QID's quantile bin. Bins are `(e_i, e_{i+1}]`, 1-based, with
//! the first bin also containing its left edge. Missing values and values
//! outside the outer edges land in bin `-1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{CommitCorpus, CommitRecord, Qid};
use crate::quantile::{dedup_quantile_edges, sorted_finite};
use crate::rng::fnv1a64;

pub const DEFAULT_BINS: usize = 20;
pub const OUT_OF_RANGE_BIN: i32 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum BinningError {
    #[error("every value of `{0}` is missing")]
    AllMissing(String),
    #[error("bin count must be at least 2, got {0}")]
    InvalidBinCount(usize),
    #[error("quasi-identifier list is empty")]
    EmptyQidList,
    #[error("invalid cluster key {0:?}")]
    InvalidClusterKey(String),
}

/// Ascending, deduplicated bin boundaries for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub qid: Qid,
    pub edges: Vec<f64>,
}

impl BinEdges {
    /// Number of bins; a constant column has one edge and one bin.
    pub fn bin_count(&self) -> usize {
        self.edges.len().saturating_sub(1).max(1)
    }

    /// 1-based bin of `value`, or `-1` when missing or out of range.
    pub fn bin_of(&self, value: Option<f64>) -> i32 {
        match value {
            Some(v) if !v.is_nan() => bin_index(&self.edges, v).unwrap_or(OUT_OF_RANGE_BIN),
            _ => OUT_OF_RANGE_BIN,
        }
    }

    /// `(left, right)` bounds of a bin, `None` for `-1` or an unknown index.
    pub fn interval(&self, bin: i32) -> Option<(f64, f64)> {
        if bin < 1 || bin as usize > self.bin_count() {
            return None;
        }
        let i = bin as usize;
        if self.edges.len() == 1 {
            return Some((self.edges[0], self.edges[0]));
        }
        Some((self.edges[i - 1], self.edges[i]))
    }
}

/// Half-open bin lookup shared with the attacker model. `None` when `v` lies
/// outside `[edges[0], edges[last]]`.
pub fn bin_index(edges: &[f64], v: f64) -> Option<i32> {
    let (first, last) = (*edges.first()?, *edges.last()?);
    if v < first || v > last {
        return None;
    }
    // First edge >= v; v lies in (edges[idx - 1], edges[idx]].
    let idx = edges.partition_point(|&e| e < v);
    Some(idx.max(1) as i32)
}

/// Quantile edges at `0, 1/n, ..., 1` with duplicates removed. Missing values are ignored.
pub fn compute_bin_edges(qid: Qid, values: &[Option<f64>], n_bins: usize) -> Result<BinEdges, BinningError> {
    if n_bins < 2 {
        return Err(BinningError::InvalidBinCount(n_bins));
    }
    let sorted = sorted_finite(values.iter().flatten().copied());
    if sorted.is_empty() {
        return Err(BinningError::AllMissing(qid.to_string()));
    }
    Ok(BinEdges { qid, edges: dedup_quantile_edges(&sorted, n_bins) })
}

/// `qids[fnv1a64(commit_id) % qids.len()]`.
pub fn assign_primary_qid<'a, T>(commit_id: &str, qids: &'a [T]) -> Result<&'a T, BinningError> {
    if qids.is_empty() {
        return Err(BinningError::EmptyQidList);
    }
    let h = fnv1a64(commit_id.as_bytes());
    Ok(&qids[(h % qids.len() as u64) as usize])
}

/// A `<QID>|<bin_index>` cluster label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterKey {
    pub qid: Qid,
    pub bin_index: i32,
}

impl ClusterKey {
    pub fn new(qid: Qid, bin_index: i32) -> Self {
        Self { qid, bin_index }
    }

    pub fn is_out_of_range(&self) -> bool {
        self.bin_index == OUT_OF_RANGE_BIN
    }
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.qid, self.bin_index)
    }
}

impl FromStr for ClusterKey {
    type Err = BinningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || BinningError::InvalidClusterKey(s.to_string());
        let (qid, bin) = s.split_once('|').ok_or_else(invalid)?;
        let qid: Qid = qid.parse().map_err(|_| invalid())?;
        let bin_index: i32 = bin.parse().map_err(|_| invalid())?;
        if bin_index < 1 && bin_index != OUT_OF_RANGE_BIN {
            return Err(invalid());
        }
        Ok(Self { qid, bin_index })
    }
}

impl Serialize for ClusterKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClusterKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Assigns one record given the edges of its primary QID.
pub fn assign_cluster(record: &CommitRecord, edges: &BinEdges) -> ClusterKey {
    ClusterKey::new(edges.qid, edges.bin_of(record.qid(edges.qid)))
}

/// Edges for every QID plus the commit → cluster mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub edges: BTreeMap<Qid, Vec<f64>>,
    pub assignments: BTreeMap<String, ClusterKey>,
}

impl ClusterAssignment {
    pub fn edges_for(&self, qid: Qid) -> Option<BinEdges> {
        self.edges.get(&qid).map(|e| BinEdges { qid, edges: e.clone() })
    }

    pub fn key_of(&self, commit_id: &str) -> Option<ClusterKey> {
        self.assignments.get(commit_id).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }
}

pub fn cluster_corpus(corpus: &CommitCorpus, n_bins: usize) -> Result<ClusterAssignment, BinningError> {
    if n_bins < 2 {
        return Err(BinningError::InvalidBinCount(n_bins));
    }
    let per_qid: Vec<(Qid, Result<BinEdges, BinningError>)> = Qid::ALL
        .par_iter()
        .map(|&qid| {
            let values: Vec<Option<f64>> = corpus.records.iter().map(|r| r.qid(qid)).collect();
            (qid, compute_bin_edges(qid, &values, n_bins))
        })
        .collect();
    let edges: BTreeMap<Qid, BinEdges> = per_qid
        .iter()
        .filter_map(|(q, e)| e.as_ref().ok().map(|e| (*q, e.clone())))
        .collect();

    let keyed: Vec<(String, Result<ClusterKey, BinningError>)> = corpus
        .records
        .par_iter()
        .map(|r| {
            let qid = *assign_primary_qid(&r.commit_id, &Qid::ALL).expect("non-empty");
            let key = edges
                .get(&qid)
                .map(|e| assign_cluster(r, e))
                .ok_or_else(|| BinningError::AllMissing(qid.to_string()));
            (r.commit_id.clone(), key)
        })
        .collect();

    let mut assignments = BTreeMap::new();
    for (id, key) in keyed {
        assignments.insert(id, key?);
    }
    Ok(ClusterAssignment {
        edges: edges.into_iter().map(|(q, e)| (q, e.edges)).collect(),
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walkthrough_edges() -> BinEdges {
        BinEdges { qid: Qid::Ndev, edges: vec![1.0, 3.0, 5.0, 8.0, 12.0] }
    }

    #[test]
    fn walkthrough_bins() {
        let e = walkthrough_edges();
        assert_eq!(e.bin_of(Some(5.0)), 2);
        assert_eq!(e.bin_of(Some(7.0)), 3);
        assert_eq!(e.bin_of(None), -1);
        assert_eq!(e.bin_of(Some(1.0)), 1);
        assert_eq!(e.bin_of(Some(12.0)), 4);
        assert_eq!(e.bin_of(Some(0.5)), -1);
        assert_eq!(e.bin_of(Some(12.5)), -1);
        assert_eq!(e.interval(3), Some((5.0, 8.0)));
        assert_eq!(e.interval(-1), None);
    }

    #[test]
    fn walkthrough_cluster_label() {
        let mut qids = [None; 10];
        qids[Qid::Ndev.index()] = Some(5.0);
        let r = CommitRecord::new("44a0a3", 0, 1, 1, qids, false);
        assert_eq!(assign_cluster(&r, &walkthrough_edges()).to_string(), "ndev|2");
        let r = CommitRecord::new("44a0a3", 0, 1, 1, [None; 10], false);
        assert_eq!(assign_cluster(&r, &walkthrough_edges()).to_string(), "ndev|-1");
    }

    #[test]
    fn constant_column_single_bin() {
        let e = compute_bin_edges(Qid::Nf, &[Some(7.0); 4], 20).unwrap();
        assert_eq!(e.edges, vec![7.0]);
        assert_eq!(e.bin_count(), 1);
        assert_eq!(e.bin_of(Some(7.0)), 1);
    }

    #[test]
    fn all_missing_is_an_error() {
        assert_eq!(
            compute_bin_edges(Qid::Nf, &[None, None], 20),
            Err(BinningError::AllMissing("nf".into()))
        );
        assert_eq!(compute_bin_edges(Qid::Nf, &[Some(1.0)], 1), Err(BinningError::InvalidBinCount(1)));
    }

    #[test]
    fn primary_qid_single_element() {
        assert_eq!(*assign_primary_qid("anything", &["ndev"]).unwrap(), "ndev");
        assert_eq!(assign_primary_qid::<&str>("x", &[]), Err(BinningError::EmptyQidList));
    }

    #[test]
    fn cluster_key_parse_round_trip() {
        for s in ["ndev|2", "age|9", "asexp|-1"] {
            assert_eq!(s.parse::<ClusterKey>().unwrap().to_string(), s);
        }
        for bad in ["ndev", "foo|1", "ndev|0", "ndev|x", "ndev|-2"] {
            assert!(bad.parse::<ClusterKey>().is_err(), "{bad}");
        }
    }
}
