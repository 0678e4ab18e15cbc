//! Seeded synthetic commit corpora.
//!
//! [`generate_corpus`] produces ApacheJIT-shaped data for offline runs: a
//! Zipf-like author pool, per-author experience counted from history, heavy
//! tailed file counts and churn that grows with the number of files, and a
//! logistic defect label driven by size, spread and inexperience.
//! [`separable_corpus`] is a sanity corpus whose label is a clean function of
//! three QIDs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnMapping, CommitCorpus, CommitRecord, Qid, QidValues};
use crate::rng::{child_seed, SeededStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    pub project: String,
    pub authors: usize,
    pub subsystems: usize,
    /// Share of commits with a missing `age`.
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { rows: 2000, seed: 2022, project: "cassandra".into(), authors: 80, subsystems: 14, missing_rate: 0.003 }
    }
}

fn hex_id(seed: u64, i: usize) -> String {
    let a = child_seed(seed, 2 * i as u64);
    let b = child_seed(seed, 2 * i as u64 + 1);
    let mut s = format!("{a:016x}{b:016x}{:08x}", (a ^ b) >> 32);
    s.truncate(40);
    s
}

fn lognormal(s: &mut SeededStream, mu: f64, sigma: f64) -> f64 {
    (mu + sigma * s.next_normal()).exp()
}

/// Index drawn with probability proportional to `1 / (rank + 1)^exponent`.
fn zipf(s: &mut SeededStream, cumulative: &[f64]) -> usize {
    let u = s.next_f64() * cumulative[cumulative.len() - 1];
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn zipf_table(n: usize, exponent: f64) -> Vec<f64> {
    let mut acc = 0.0;
    (0..n)
        .map(|k| {
            acc += 1.0 / ((k + 1) as f64).powf(exponent);
            acc
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn corpus_with_project(records: Vec<CommitRecord>, project: &str) -> CommitCorpus {
    let mapping = ColumnMapping::default();
    let mut header = vec![mapping.commit_id.clone(), "project".to_string(), mapping.timestamp.clone()];
    header.extend(Qid::ALL.iter().map(|q| q.as_str().to_string()));
    header.extend([mapping.la.clone(), mapping.ld.clone(), mapping.buggy.clone()]);
    let records = records
        .into_iter()
        .map(|mut r| {
            r.extra = vec![project.to_string()];
            r
        })
        .collect();
    CommitCorpus { records, source_name: project.to_string(), column_manifest: header, extra_columns: vec!["project".into()], mapping }
}

const SECONDS_PER_DAY: f64 = 86_400.0;

pub fn generate_corpus(config: &SynthConfig) -> CommitCorpus {
    let mut s = SeededStream::new(config.seed);
    let authors = zipf_table(config.authors.max(1), 1.1);
    let subsystems = zipf_table(config.subsystems.max(1), 0.9);
    let mut t = 1_262_304_000.0; // 2010-01-01
    // Per author: timestamps and subsystems of earlier commits.
    let mut history: HashMap<usize, Vec<(f64, usize)>> = HashMap::new();
    // Per subsystem: distinct authors so far and change count.
    let mut sub_devs: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut sub_changes: HashMap<usize, usize> = HashMap::new();
    let mut sub_last: HashMap<usize, f64> = HashMap::new();

    let mut records = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        t += lognormal(&mut s, 9.3, 1.2);
        let author = zipf(&mut s, &authors);
        let sub = zipf(&mut s, &subsystems);

        let nf = (1.0 + lognormal(&mut s, -0.2, 1.15).floor()).min(400.0);
        let nd = (1.0 + ((nf - 1.0) * s.next_f64().powi(2)).round()).min(nf);
        let ns = (1.0 + ((nd - 1.0) * s.next_beta(1.0, 6.0)).round()).min(nd);
        let ent = if nf == 1.0 { 0.0 } else { (s.next_beta(4.0, 2.0) * nf.log2() * 1000.0).round() / 1000.0 };

        let prior = history.entry(author).or_default();
        let aexp = prior.len() as f64;
        let arexp = prior.iter().map(|(pt, _)| 1.0 / (1.0 + (t - pt) / (365.0 * SECONDS_PER_DAY))).sum::<f64>();
        let arexp = (arexp * 100.0).round() / 100.0 + 0.0;
        let asexp = prior.iter().filter(|(_, ps)| *ps == sub).count() as f64;
        prior.push((t, sub));

        let devs = sub_devs.entry(sub).or_default();
        if !devs.contains(&author) {
            devs.push(author);
        }
        // Developers and prior changes of the touched files grow with the subsystem's history and the file count.
        let spread = nf.ln_1p();
        let ndev = (1.0 + (devs.len() as f64 * s.next_f64() * (0.3 + 0.2 * spread)).floor()).min(devs.len() as f64);
        let changes = sub_changes.entry(sub).or_insert(0);
        *changes += 1;
        let nuc = (ndev + (*changes as f64).sqrt() * spread * s.next_f64()).round().max(ndev);
        let since = t - *sub_last.get(&sub).unwrap_or(&(t - 30.0 * SECONDS_PER_DAY));
        sub_last.insert(sub, t);
        let age = ((since / SECONDS_PER_DAY) * (0.5 + s.next_f64()) * 100.0).round() / 100.0;
        let age = if s.next_f64() < config.missing_rate { None } else { Some(age) };

        let churn = if s.next_f64() < 0.01 { 0.0 } else { lognormal(&mut s, 2.4 + 0.75 * nf.ln(), 1.25).round().max(1.0) };
        let u = s.next_f64();
        let ratio = if u < 0.1 {
            1.0
        } else if u < 0.13 {
            0.0
        } else {
            s.next_beta(2.2, 1.1)
        };
        let la = (ratio * churn).round();
        let ld = churn - la;

        let z = -2.1 + 0.3 * churn.ln_1p() + 0.25 * nf.ln() + 0.15 * ndev.ln_1p() + 0.2 * ent - 0.12 * aexp.ln_1p() + 0.3 * s.next_normal();
        let buggy = s.next_f64() < sigmoid(z);

        let qids: QidValues = [Some(nf), Some(nd), Some(ns), Some(ent), Some(ndev), Some(nuc), age, Some(aexp), Some(arexp), Some(asexp)];
        records.push(CommitRecord::new(hex_id(config.seed, i), t as i64, la as u64, ld as u64, qids, buggy));
    }
    corpus_with_project(records, &config.project)
}

/// Buggy commits touch 11 to 20 files, clean ones 1 to 9; nd and ns follow nf.
/// Other fields are label-independent noise.
pub fn separable_corpus(rows: usize, seed: u64) -> CommitCorpus {
    let mut s = SeededStream::new(seed);
    let records = (0..rows)
        .map(|i| {
            let buggy = s.next_f64() < 0.3;
            let nf = if buggy { 11 + s.next_below(10) } else { 1 + s.next_below(9) } as f64;
            let nd = (nf / 2.0).ceil();
            let ns = (nf / 4.0).ceil();
            let mut qids: QidValues = [None; 10];
            qids[Qid::Nf.index()] = Some(nf);
            qids[Qid::Nd.index()] = Some(nd);
            qids[Qid::Ns.index()] = Some(ns);
            for q in &Qid::ALL[3..] {
                qids[q.index()] = Some((s.next_f64() * 50.0).round());
            }
            let la = s.next_below(200) as u64;
            let ld = s.next_below(100) as u64;
            CommitRecord::new(hex_id(seed, i), 1_500_000_000 + 3600 * i as i64, la, ld, qids, buggy)
        })
        .collect();
    corpus_with_project(records, "separable")
}
