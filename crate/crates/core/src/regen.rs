//! Regeneration of la/ld from cluster parameters.
//!
//! Every commit owns a stream seeded from its id. Draw order per commit:
//! for each churn attempt, one component-selection uniform then one
//! Box–Muller pair; after churn is fixed, the two gamma draws of the ratio.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{ClusterAssignment, ClusterKey};
use crate::corpus::{CommitCorpus, CommitRecord};
use crate::paramgen::{AnonymizationParams, ChurnMixture, RatioBeta};
use crate::rng::{fnv1a64, splitmix64_mix, SeededStream};

/// Redraws allowed after an out-of-bounds churn before clamping.
pub const MAX_CHURN_REDRAWS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum RegenError {
    #[error("commit id is empty")]
    EmptyCommitId,
    #[error("no parameters for cluster {0}")]
    MissingParams(String),
    #[error("commit `{0}` has no cluster assignment")]
    Unassigned(String),
}

/// FNV-1a 64 of the id, passed once through the SplitMix64 finalizer.
pub fn derive_seed(commit_id: &str) -> Result<u64, RegenError> {
    if commit_id.is_empty() {
        return Err(RegenError::EmptyCommitId);
    }
    Ok(splitmix64_mix(fnv1a64(commit_id.as_bytes())))
}

fn draw_churn(mixture: &ChurnMixture, stream: &mut SeededStream) -> f64 {
    let u = stream.next_f64();
    let mut cumulative = 0.0;
    let comps = &mixture.components;
    let chosen = comps
        .iter()
        .find(|c| {
            cumulative += c.weight;
            u < cumulative
        })
        .unwrap_or(&comps[comps.len() - 1]);
    (chosen.mean + chosen.std * stream.next_normal()).round()
}

/// Integer churn within `[min_churn, max_churn]`.
pub fn sample_churn(mixture: &ChurnMixture, stream: &mut SeededStream) -> u64 {
    let (lo, hi) = (mixture.min_churn as f64, mixture.max_churn as f64);
    let mut value = draw_churn(mixture, stream);
    for _ in 0..MAX_CHURN_REDRAWS {
        if value >= lo && value <= hi {
            break;
        }
        value = draw_churn(mixture, stream);
    }
    if value < lo {
        mixture.min_churn
    } else if value > hi {
        mixture.max_churn
    } else {
        value as u64
    }
}

pub fn sample_ratio(beta: &RatioBeta, stream: &mut SeededStream) -> f64 {
    stream.next_beta(beta.alpha, beta.beta)
}

/// `la = round(ratio * churn)` (half away from zero), `ld = churn - la`.
pub fn reconstruct(churn: u64, ratio: f64) -> (u64, u64) {
    let la = ((ratio.clamp(0.0, 1.0) * churn as f64).round() as u64).min(churn);
    (la, churn - la)
}

/// Replaces la/ld of one commit; every other field is left untouched.
pub fn anonymize_commit(record: &CommitRecord, params: &AnonymizationParams) -> Result<CommitRecord, RegenError> {
    let mut stream = SeededStream::new(derive_seed(&record.commit_id)?);
    let churn = sample_churn(&params.churn_mixture, &mut stream);
    let ratio = sample_ratio(&params.ratio_beta, &mut stream);
    let (la, ld) = reconstruct(churn, ratio);
    let mut out = record.clone();
    out.la = la;
    out.ld = ld;
    out.derive();
    Ok(out)
}

pub fn anonymize_corpus(
    corpus: &CommitCorpus,
    assignment: &ClusterAssignment,
    params: &BTreeMap<ClusterKey, AnonymizationParams>,
) -> Result<CommitCorpus, RegenError> {
    let records = corpus
        .records
        .par_iter()
        .map(|r| {
            let key = assignment.key_of(&r.commit_id).ok_or_else(|| RegenError::Unassigned(r.commit_id.clone()))?;
            let p = params.get(&key).ok_or_else(|| RegenError::MissingParams(key.to_string()))?;
            anonymize_commit(r, p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(corpus.with_records(records))
}

/// Sidecar written next to an anonymized CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub tool_version: String,
    pub prng_algorithm: String,
    pub params_manifest_sha256: String,
    pub master_seed: u64,
    pub records: usize,
    pub clusters: usize,
    pub model_params: usize,
    pub fallback_params: usize,
}
