//! Per-cluster quantile summaries of la, ld, churn and ratio.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{BinEdges, ClusterAssignment, ClusterKey};
use crate::corpus::{CommitCorpus, CommitRecord};
use crate::quantile::{quantile_sorted, sorted_finite};

/// Clusters smaller than this are parameterized by the local fallback without a model call.
pub const MIN_MODEL_CLUSTER_SIZE: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("cluster {0} has no members")]
    EmptyCluster(String),
    #[error("commit `{0}` has no cluster assignment")]
    Unassigned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

impl QuantileSummary {
    /// `None` when no values are given.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let sorted = sorted_finite(values);
        let q = |p| quantile_sorted(&sorted, p);
        Some(Self {
            min: q(0.0)?,
            p5: q(0.05)?,
            p25: q(0.25)?,
            p50: q(0.5)?,
            p75: q(0.75)?,
            p95: q(0.95)?,
            max: q(1.0)?,
        })
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.min, self.p5, self.p25, self.p50, self.p75, self.p95, self.max]
    }

    pub fn is_monotone(&self) -> bool {
        self.as_array().windows(2).all(|w| w[0] <= w[1])
    }
}

/// Summary of one cluster. Serialized as the model's user-message payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster_id: ClusterKey,
    pub bin_left: Option<f64>,
    pub bin_right: Option<f64>,
    pub count: usize,
    pub la: QuantileSummary,
    pub ld: QuantileSummary,
    pub churn: QuantileSummary,
    pub ratio: QuantileSummary,
}

impl ClusterStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

pub fn summarize_cluster(members: &[&CommitRecord], key: ClusterKey, edges: Option<&BinEdges>) -> Result<ClusterStats, StatsError> {
    let summary = |f: fn(&CommitRecord) -> f64| {
        QuantileSummary::from_values(members.iter().map(|r| f(r))).ok_or_else(|| StatsError::EmptyCluster(key.to_string()))
    };
    let la = summary(|r| r.la as f64)?;
    let ld = summary(|r| r.ld as f64)?;
    let churn = summary(|r| r.churn as f64)?;
    let ratio = summary(|r| r.ratio)?;
    let interval = edges.and_then(|e| e.interval(key.bin_index));
    Ok(ClusterStats {
        cluster_id: key,
        bin_left: interval.map(|i| i.0),
        bin_right: interval.map(|i| i.1),
        count: members.len(),
        la,
        ld,
        churn,
        ratio,
    })
}

/// Groups records by cluster, preserving corpus order within each group.
pub fn group_members<'a>(
    corpus: &'a CommitCorpus,
    assignment: &ClusterAssignment,
) -> Result<BTreeMap<ClusterKey, Vec<&'a CommitRecord>>, StatsError> {
    let mut groups: BTreeMap<ClusterKey, Vec<&CommitRecord>> = BTreeMap::new();
    for r in &corpus.records {
        let key = assignment.key_of(&r.commit_id).ok_or_else(|| StatsError::Unassigned(r.commit_id.clone()))?;
        groups.entry(key).or_default().push(r);
    }
    Ok(groups)
}

pub fn summarize_all(corpus: &CommitCorpus, assignment: &ClusterAssignment) -> Result<BTreeMap<ClusterKey, ClusterStats>, StatsError> {
    let groups = group_members(corpus, assignment)?;
    let groups: Vec<_> = groups.into_iter().collect();
    groups
        .par_iter()
        .map(|(key, members)| {
            let edges = assignment.edges_for(key.qid);
            summarize_cluster(members, *key, edges.as_ref()).map(|s| (*key, s))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Qid;

    fn rec(id: &str, la: u64, ld: u64) -> CommitRecord {
        CommitRecord::new(id, 0, la, ld, [Some(1.0); 10], false)
    }

    #[test]
    fn single_member_all_quantiles_equal() {
        let r = rec("a", 20, 30);
        let s = summarize_cluster(&[&r], ClusterKey::new(Qid::Nf, 1), None).unwrap();
        assert!(s.churn.as_array().iter().all(|&v| v == 50.0));
        assert_eq!(s.count, 1);
    }

    #[test]
    fn churn_median_interpolates() {
        let rs: Vec<_> = [10, 20, 30, 40].iter().enumerate().map(|(i, &c)| rec(&i.to_string(), c, 0)).collect();
        let refs: Vec<&CommitRecord> = rs.iter().collect();
        let s = summarize_cluster(&refs, ClusterKey::new(Qid::Nf, 1), None).unwrap();
        assert_eq!(s.churn.p50, 25.0);
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let err = summarize_cluster(&[], ClusterKey::new(Qid::Nf, 1), None).unwrap_err();
        assert_eq!(err, StatsError::EmptyCluster("nf|1".into()));
    }

    #[test]
    fn interval_copied_from_edges() {
        let r = rec("a", 1, 1);
        let edges = BinEdges { qid: Qid::Ndev, edges: vec![1.0, 3.0, 5.0, 8.0, 12.0] };
        let s = summarize_cluster(&[&r], ClusterKey::new(Qid::Ndev, 2), Some(&edges)).unwrap();
        assert_eq!((s.bin_left, s.bin_right), (Some(3.0), Some(5.0)));
        let s = summarize_cluster(&[&r], ClusterKey::new(Qid::Ndev, -1), Some(&edges)).unwrap();
        assert_eq!((s.bin_left, s.bin_right), (None, None));
        assert!(s.to_json().contains("\"bin_left\":null"));
    }
}
