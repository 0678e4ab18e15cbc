//! Sensitive-attribute-disclosure attacker and the Increased Privacy Ratio.
//!
//! The attacker knows every commit's QIDs and the original distribution. Each
//! original row yields one query per sensitive attribute: "what is the modal
//! la (or ld) bin among commits whose QIDs fall in these bins?". A query is a
//! breach when the anonymized corpus answers with the same modal bin as the
//! original. `IPR = (1 - breaches / queries) * 100`.
//!
//! All bins are equal-frequency bins fitted on the original corpus and frozen
//! for the anonymized one.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::bin_index;
use crate::corpus::{CommitCorpus, CommitRecord, Qid};
use crate::quantile::{dedup_quantile_edges, sorted_finite};

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("no values to bin")]
    AllMissing,
    #[error("bin counts must be at least 2")]
    InvalidBinCount,
    #[error("original and anonymized corpora do not contain the same commits: {0}")]
    RowMismatch(String),
    #[error("query matched no original rows")]
    EmptyOriginalGroup,
    #[error("no queries could be formed")]
    NoQueries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackerConfig {
    pub qid_bins: usize,
    pub sensitive_bins: usize,
    /// QIDs per query signature, taken in canonical order; `None` uses all available.
    pub query_qid_count: Option<usize>,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self { qid_bins: 10, sensitive_bins: 10, query_qid_count: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveAttribute {
    La,
    Ld,
}

impl SensitiveAttribute {
    pub const ALL: [SensitiveAttribute; 2] = [SensitiveAttribute::La, SensitiveAttribute::Ld];

    pub fn as_str(self) -> &'static str {
        match self {
            SensitiveAttribute::La => "la",
            SensitiveAttribute::Ld => "ld",
        }
    }

    fn value(self, r: &CommitRecord) -> f64 {
        match self {
            SensitiveAttribute::La => r.la as f64,
            SensitiveAttribute::Ld => r.ld as f64,
        }
    }
}

/// Equal-frequency boundaries: quantiles at `i / k`, deduplicated.
pub fn equal_frequency_bins(values: &[f64], k: usize) -> Result<Vec<f64>, PrivacyError> {
    if k < 2 {
        return Err(PrivacyError::InvalidBinCount);
    }
    let sorted = sorted_finite(values.iter().copied());
    if sorted.is_empty() {
        return Err(PrivacyError::AllMissing);
    }
    Ok(dedup_quantile_edges(&sorted, k))
}

/// Half-open bin lookup; values beyond the frozen outer edges go to the nearest end bin.
pub fn bin_clamped(edges: &[f64], v: f64) -> i32 {
    let last_bin = edges.len().saturating_sub(1).max(1) as i32;
    if v < edges[0] {
        1
    } else if v > edges[edges.len() - 1] {
        last_bin
    } else {
        bin_index(edges, v).unwrap_or(1)
    }
}

/// A QID bin-signature predicate: `(qid, bin)` pairs a row must match.
pub type Predicate = Vec<(Qid, i32)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    /// Commit the query was generated from.
    pub commit_id: String,
    pub attribute: SensitiveAttribute,
    pub predicate: Predicate,
}

/// Attacker background knowledge fitted on the original corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Attacker {
    pub config: AttackerConfig,
    qid_edges: BTreeMap<Qid, Vec<f64>>,
    sensitive_edges: BTreeMap<SensitiveAttribute, Vec<f64>>,
}

const NO_BIN: i32 = -1;

struct Indexed {
    signatures: Vec<[i32; 10]>,
    sensitive: Vec<[i32; 2]>,
    by_signature: HashMap<[i32; 10], Vec<usize>>,
}

impl Attacker {
    pub fn fit(original: &CommitCorpus, config: AttackerConfig) -> Result<Self, PrivacyError> {
        if config.qid_bins < 2 || config.sensitive_bins < 2 {
            return Err(PrivacyError::InvalidBinCount);
        }
        let mut qid_edges = BTreeMap::new();
        for qid in Qid::ALL {
            let values: Vec<f64> = original.records.iter().filter_map(|r| r.qid(qid)).collect();
            if let Ok(edges) = equal_frequency_bins(&values, config.qid_bins) {
                qid_edges.insert(qid, edges);
            }
        }
        let mut sensitive_edges = BTreeMap::new();
        for attr in SensitiveAttribute::ALL {
            let values: Vec<f64> = original.records.iter().map(|r| attr.value(r)).collect();
            sensitive_edges.insert(attr, equal_frequency_bins(&values, config.sensitive_bins)?);
        }
        Ok(Self { config, qid_edges, sensitive_edges })
    }

    pub fn qid_edges(&self, qid: Qid) -> Option<&[f64]> {
        self.qid_edges.get(&qid).map(Vec::as_slice)
    }

    pub fn sensitive_edges(&self, attr: SensitiveAttribute) -> &[f64] {
        &self.sensitive_edges[&attr]
    }

    fn signature(&self, r: &CommitRecord) -> [i32; 10] {
        let mut sig = [NO_BIN; 10];
        for (qid, edges) in &self.qid_edges {
            if let Some(v) = r.qid(*qid) {
                sig[qid.index()] = bin_clamped(edges, v);
            }
        }
        sig
    }

    pub fn sensitive_bin(&self, attr: SensitiveAttribute, r: &CommitRecord) -> i32 {
        bin_clamped(&self.sensitive_edges[&attr], attr.value(r))
    }

    /// The query predicate for one row; empty when the row has no usable QID.
    pub fn predicate(&self, r: &CommitRecord) -> Predicate {
        let sig = self.signature(r);
        let limit = self.config.query_qid_count.unwrap_or(Qid::ALL.len());
        Qid::ALL
            .into_iter()
            .filter(|q| sig[q.index()] != NO_BIN)
            .take(limit)
            .map(|q| (q, sig[q.index()]))
            .collect()
    }

    /// One query per row per sensitive attribute, in corpus order.
    pub fn generate_queries(&self, original: &CommitCorpus) -> Vec<Query> {
        let mut out = Vec::with_capacity(original.len() * 2);
        for r in &original.records {
            let predicate = self.predicate(r);
            if predicate.is_empty() {
                continue;
            }
            for attribute in SensitiveAttribute::ALL {
                out.push(Query { commit_id: r.commit_id.clone(), attribute, predicate: predicate.clone() });
            }
        }
        out
    }

    fn index(&self, records: &[&CommitRecord]) -> Indexed {
        let signatures: Vec<[i32; 10]> = records.iter().map(|r| self.signature(r)).collect();
        let sensitive = records
            .iter()
            .map(|r| [self.sensitive_bin(SensitiveAttribute::La, r), self.sensitive_bin(SensitiveAttribute::Ld, r)])
            .collect();
        let mut by_signature: HashMap<[i32; 10], Vec<usize>> = HashMap::new();
        for (i, s) in signatures.iter().enumerate() {
            by_signature.entry(*s).or_default().push(i);
        }
        Indexed { signatures, sensitive, by_signature }
    }

    /// Modal sensitive bin among matching rows, ties to the smallest bin; `None` for no match.
    fn group_modes(&self, idx: &Indexed, predicate: &Predicate) -> Option<[i32; 2]> {
        let full = predicate.len() == Qid::ALL.len();
        let matches = |sig: &[i32; 10]| predicate.iter().all(|(q, b)| sig[q.index()] == *b);
        let rows: Vec<usize> = if full {
            let mut key = [NO_BIN; 10];
            for (q, b) in predicate {
                key[q.index()] = *b;
            }
            idx.by_signature.get(&key).cloned().unwrap_or_default()
        } else {
            (0..idx.signatures.len()).filter(|&i| matches(&idx.signatures[i])).collect()
        };
        if rows.is_empty() {
            return None;
        }
        let mut modes = [0i32; 2];
        for (a, mode) in modes.iter_mut().enumerate() {
            let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
            for &i in &rows {
                *counts.entry(idx.sensitive[i][a]).or_default() += 1;
            }
            // max_by_key keeps the last maximum; iterate in reverse so ties resolve to the smallest bin.
            *mode = *counts.iter().rev().max_by_key(|(_, &c)| c).map(|(b, _)| b).expect("non-empty");
        }
        Some(modes)
    }

    /// Whether one query breaches. An empty anonymized group is not a breach.
    pub fn evaluate_query(&self, query: &Query, original: &CommitCorpus, anonymized: &CommitCorpus) -> Result<bool, PrivacyError> {
        let orig: Vec<&CommitRecord> = original.records.iter().collect();
        let anon: Vec<&CommitRecord> = anonymized.records.iter().collect();
        let a = query.attribute as usize;
        let o = self.group_modes(&self.index(&orig), &query.predicate).ok_or(PrivacyError::EmptyOriginalGroup)?;
        Ok(self.group_modes(&self.index(&anon), &query.predicate).is_some_and(|m| m[a] == o[a]))
    }
}

pub fn generate_queries(original: &CommitCorpus, config: &AttackerConfig) -> Result<Vec<Query>, PrivacyError> {
    Ok(Attacker::fit(original, config.clone())?.generate_queries(original))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub queries: usize,
    pub breaches: usize,
    pub ipr_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub total_queries: usize,
    pub breaches: usize,
    pub ipr_percent: f64,
    pub per_attribute: BTreeMap<SensitiveAttribute, AttributeReport>,
    pub config: AttackerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub commit_id: String,
    pub attribute: SensitiveAttribute,
    pub breach: bool,
}

pub fn ipr_percent(breaches: usize, queries: usize) -> f64 {
    (1.0 - breaches as f64 / queries as f64) * 100.0
}

fn aligned<'a>(original: &CommitCorpus, anonymized: &'a CommitCorpus) -> Result<Vec<&'a CommitRecord>, PrivacyError> {
    if original.len() != anonymized.len() {
        return Err(PrivacyError::RowMismatch(format!("{} vs {} rows", original.len(), anonymized.len())));
    }
    let by_id: HashMap<&str, &CommitRecord> = anonymized.records.iter().map(|r| (r.commit_id.as_str(), r)).collect();
    original
        .records
        .iter()
        .map(|r| by_id.get(r.commit_id.as_str()).copied().ok_or_else(|| PrivacyError::RowMismatch(format!("`{}` missing", r.commit_id))))
        .collect()
}

pub fn compute_ipr(original: &CommitCorpus, anonymized: &CommitCorpus, config: &AttackerConfig) -> Result<PrivacyReport, PrivacyError> {
    compute_ipr_with_outcomes(original, anonymized, config).map(|(r, _)| r)
}

/// Like [`compute_ipr`], also returning the per-query breach flags.
pub fn compute_ipr_with_outcomes(
    original: &CommitCorpus,
    anonymized: &CommitCorpus,
    config: &AttackerConfig,
) -> Result<(PrivacyReport, Vec<QueryOutcome>), PrivacyError> {
    let anon_rows = aligned(original, anonymized)?;
    let attacker = Attacker::fit(original, config.clone())?;
    let orig_rows: Vec<&CommitRecord> = original.records.iter().collect();
    let orig_idx = attacker.index(&orig_rows);
    let anon_idx = attacker.index(&anon_rows);

    let predicates: Vec<Predicate> = orig_rows.iter().map(|r| attacker.predicate(r)).collect();
    let mut distinct: Vec<&Predicate> = predicates.iter().filter(|p| !p.is_empty()).collect();
    distinct.sort();
    distinct.dedup();
    let modes: HashMap<&Predicate, ([i32; 2], Option<[i32; 2]>)> = distinct
        .par_iter()
        .map(|p| {
            let o = attacker.group_modes(&orig_idx, p).ok_or(PrivacyError::EmptyOriginalGroup)?;
            Ok((*p, (o, attacker.group_modes(&anon_idx, p))))
        })
        .collect::<Result<_, PrivacyError>>()?;

    let mut outcomes = Vec::with_capacity(orig_rows.len() * 2);
    let mut per_attribute: BTreeMap<SensitiveAttribute, AttributeReport> = BTreeMap::new();
    for (r, p) in orig_rows.iter().zip(&predicates) {
        if p.is_empty() {
            continue;
        }
        let (o, a) = modes[p];
        for attr in SensitiveAttribute::ALL {
            let i = attr as usize;
            let breach = a.is_some_and(|a| a[i] == o[i]);
            let entry = per_attribute.entry(attr).or_insert(AttributeReport { queries: 0, breaches: 0, ipr_percent: 0.0 });
            entry.queries += 1;
            entry.breaches += usize::from(breach);
            outcomes.push(QueryOutcome { commit_id: r.commit_id.clone(), attribute: attr, breach });
        }
    }
    if outcomes.is_empty() {
        return Err(PrivacyError::NoQueries);
    }
    for rep in per_attribute.values_mut() {
        rep.ipr_percent = ipr_percent(rep.breaches, rep.queries);
    }
    let total_queries = outcomes.len();
    let breaches = outcomes.iter().filter(|o| o.breach).count();
    Ok((
        PrivacyReport {
            total_queries,
            breaches,
            ipr_percent: ipr_percent(breaches, total_queries),
            per_attribute,
            config: config.clone(),
        },
        outcomes,
    ))
}

/// Per-query breach flags as CSV.
pub fn write_outcomes_csv<W: std::io::Write>(outcomes: &[QueryOutcome], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["commit_id", "attribute", "breach"])?;
    for o in outcomes {
        w.write_record([o.commit_id.as_str(), o.attribute.as_str(), if o.breach { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}
