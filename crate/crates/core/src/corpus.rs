//! Commit-level corpora: loading, derived metrics and the chronological split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse field `{field}` from {value:?}")]
    RowParseError { row: usize, field: String, value: String },
    #[error("duplicate commit id `{0}`")]
    DuplicateCommitId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

/// The ten quasi-identifiers, in the fixed order used for primary-QID hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qid {
    Nf,
    Nd,
    Ns,
    Ent,
    Ndev,
    Nuc,
    Age,
    Aexp,
    Arexp,
    Asexp,
}

impl Qid {
    pub const ALL: [Qid; 10] = [
        Qid::Nf,
        Qid::Nd,
        Qid::Ns,
        Qid::Ent,
        Qid::Ndev,
        Qid::Nuc,
        Qid::Age,
        Qid::Aexp,
        Qid::Arexp,
        Qid::Asexp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Qid::Nf => "nf",
            Qid::Nd => "nd",
            Qid::Ns => "ns",
            Qid::Ent => "ent",
            Qid::Ndev => "ndev",
            Qid::Nuc => "nuc",
            Qid::Age => "age",
            Qid::Aexp => "aexp",
            Qid::Arexp => "arexp",
            Qid::Asexp => "asexp",
        }
    }

    /// Position in [`Qid::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-line meaning, used in the model prompt glossary.
    pub fn description(self) -> &'static str {
        match self {
            Qid::Nf => "number of modified files",
            Qid::Nd => "number of modified directories",
            Qid::Ns => "number of modified subsystems",
            Qid::Ent => "entropy of the change across modified files",
            Qid::Ndev => "number of developers that previously changed the modified files",
            Qid::Nuc => "number of unique prior changes to the modified files",
            Qid::Age => "average time in days since the modified files were last changed",
            Qid::Aexp => "author experience (prior commits)",
            Qid::Arexp => "author recent experience",
            Qid::Asexp => "author experience within the subsystem",
        }
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Qid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Qid::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| format!("unknown quasi-identifier `{s}`"))
    }
}

/// QID values of one commit; `None` marks a missing value.
pub type QidValues = [Option<f64>; 10];

#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub commit_id: String,
    /// Author date, epoch seconds.
    pub timestamp: i64,
    pub la: u64,
    pub ld: u64,
    pub qids: QidValues,
    pub buggy: bool,
    pub churn: u64,
    pub ratio: f64,
    /// Unmapped input columns, carried through verbatim.
    pub extra: Vec<String>,
}

impl CommitRecord {
    pub fn new(commit_id: impl Into<String>, timestamp: i64, la: u64, ld: u64, qids: QidValues, buggy: bool) -> Self {
        let mut record = Self {
            commit_id: commit_id.into(),
            timestamp,
            la,
            ld,
            qids,
            buggy,
            churn: 0,
            ratio: 0.0,
            extra: Vec::new(),
        };
        record.derive();
        record
    }

    /// Recomputes `churn = la + ld` and `ratio = la / churn` (0 when churn is 0).
    pub fn derive(&mut self) {
        self.churn = self.la + self.ld;
        self.ratio = if self.churn == 0 { 0.0 } else { self.la as f64 / self.churn as f64 };
    }

    pub fn qid(&self, qid: Qid) -> Option<f64> {
        self.qids[qid.index()]
    }
}

/// Maps logical fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub commit_id: String,
    pub timestamp: String,
    pub la: String,
    pub ld: String,
    pub buggy: String,
    /// Overrides for QID column names; unlisted QIDs use their own name.
    pub qids: BTreeMap<Qid, String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            commit_id: "commit_id".into(),
            timestamp: "timestamp".into(),
            la: "la".into(),
            ld: "ld".into(),
            buggy: "buggy".into(),
            qids: BTreeMap::new(),
        }
    }
}

impl ColumnMapping {
    /// Column names of the public ApacheJIT release.
    pub fn apache_jit() -> Self {
        Self { timestamp: "author_date".into(), ..Self::default() }
    }

    pub fn qid_column(&self, qid: Qid) -> &str {
        self.qids.get(&qid).map(String::as_str).unwrap_or(qid.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitCorpus {
    pub records: Vec<CommitRecord>,
    pub source_name: String,
    /// Header of the source file, in order.
    pub column_manifest: Vec<String>,
    /// Names of the unmapped columns stored in [`CommitRecord::extra`].
    pub extra_columns: Vec<String>,
    pub mapping: ColumnMapping,
}

impl CommitCorpus {
    /// A corpus built in memory, using the default column names.
    pub fn from_records(source_name: impl Into<String>, records: Vec<CommitRecord>) -> Self {
        let mapping = ColumnMapping::default();
        Self {
            records,
            source_name: source_name.into(),
            column_manifest: default_header(&mapping),
            extra_columns: Vec::new(),
            mapping,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same metadata, different rows.
    pub fn with_records(&self, records: Vec<CommitRecord>) -> Self {
        Self {
            records,
            source_name: self.source_name.clone(),
            column_manifest: self.column_manifest.clone(),
            extra_columns: self.extra_columns.clone(),
            mapping: self.mapping.clone(),
        }
    }
}

const DERIVED_COLUMNS: [&str; 2] = ["churn", "ratio"];

fn default_header(mapping: &ColumnMapping) -> Vec<String> {
    let mut header = vec![mapping.commit_id.clone(), mapping.timestamp.clone()];
    header.extend(Qid::ALL.iter().map(|&q| mapping.qid_column(q).to_string()));
    header.extend([mapping.la.clone(), mapping.ld.clone(), mapping.buggy.clone()]);
    header
}

const MISSING_MARKERS: [&str; 7] = ["", "na", "nan", "null", "none", "n/a", "?"];

fn is_missing(raw: &str) -> bool {
    let t = raw.trim().to_ascii_lowercase();
    MISSING_MARKERS.contains(&t.as_str())
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "1.0" => Some(true),
        "0" | "false" | "f" | "no" | "0.0" => Some(false),
        _ => None,
    }
}

enum Slot {
    CommitId,
    Timestamp,
    La,
    Ld,
    Buggy,
    Qid(Qid),
    Derived,
    Extra,
}

pub fn load_corpus(path: &Path, mapping: &ColumnMapping, delimiter: u8) -> Result<CommitCorpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    read_corpus(file, name, mapping, delimiter)
}

pub fn read_corpus<R: Read>(
    reader: R,
    source_name: impl Into<String>,
    mapping: &ColumnMapping,
    delimiter: u8,
) -> Result<CommitCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let find = |name: &str| -> Result<usize, CorpusError> {
        header.iter().position(|h| h == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let mut slots: Vec<Slot> = (0..header.len()).map(|_| Slot::Extra).collect();
    slots[find(&mapping.commit_id)?] = Slot::CommitId;
    slots[find(&mapping.timestamp)?] = Slot::Timestamp;
    slots[find(&mapping.la)?] = Slot::La;
    slots[find(&mapping.ld)?] = Slot::Ld;
    slots[find(&mapping.buggy)?] = Slot::Buggy;
    for qid in Qid::ALL {
        slots[find(mapping.qid_column(qid))?] = Slot::Qid(qid);
    }
    for (i, h) in header.iter().enumerate() {
        if matches!(slots[i], Slot::Extra) && DERIVED_COLUMNS.contains(&h.as_str()) {
            slots[i] = Slot::Derived;
        }
    }
    let extra_columns: Vec<String> = header
        .iter()
        .zip(&slots)
        .filter(|(_, s)| matches!(s, Slot::Extra))
        .map(|(h, _)| h.clone())
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let bad = |field: &str, value: &str| CorpusError::RowParseError {
            row: row_no,
            field: field.to_string(),
            value: value.to_string(),
        };
        let mut commit_id = String::new();
        let mut timestamp = 0i64;
        let (mut la, mut ld) = (0u64, 0u64);
        let mut buggy = false;
        let mut qids: QidValues = [None; 10];
        let mut extra = Vec::with_capacity(extra_columns.len());
        for (slot, raw) in slots.iter().zip(row.iter()) {
            match slot {
                Slot::CommitId => {
                    commit_id = raw.trim().to_string();
                    if commit_id.is_empty() {
                        return Err(bad("commit_id", raw));
                    }
                }
                Slot::Timestamp => timestamp = raw.trim().parse().map_err(|_| bad("timestamp", raw))?,
                Slot::La => la = raw.trim().parse().map_err(|_| bad("la", raw))?,
                Slot::Ld => ld = raw.trim().parse().map_err(|_| bad("ld", raw))?,
                Slot::Buggy => buggy = parse_bool(raw).ok_or_else(|| bad("buggy", raw))?,
                Slot::Qid(q) => {
                    if !is_missing(raw) {
                        let v: f64 = raw.trim().parse().map_err(|_| bad(q.as_str(), raw))?;
                        if !v.is_finite() || v < 0.0 {
                            return Err(bad(q.as_str(), raw));
                        }
                        qids[q.index()] = Some(v);
                    }
                }
                Slot::Derived => {}
                Slot::Extra => extra.push(raw.to_string()),
            }
        }
        if !seen.insert(commit_id.clone()) {
            return Err(CorpusError::DuplicateCommitId(commit_id));
        }
        let mut record = CommitRecord::new(commit_id, timestamp, la, ld, qids, buggy);
        record.extra = extra;
        records.push(record);
    }

    Ok(CommitCorpus {
        records,
        source_name: source_name.into(),
        column_manifest: header,
        extra_columns,
        mapping: mapping.clone(),
    })
}

/// Writes the corpus with its input columns followed by `churn` and `ratio`.
pub fn write_corpus<W: Write>(corpus: &CommitCorpus, writer: W, delimiter: u8) -> Result<(), CorpusError> {
    let mapping = &corpus.mapping;
    let header: Vec<&str> = corpus
        .column_manifest
        .iter()
        .map(String::as_str)
        .filter(|h| !DERIVED_COLUMNS.contains(h) || is_mapped(mapping, h))
        .collect();
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let mut out: Vec<&str> = header.clone();
    out.extend(DERIVED_COLUMNS);
    wtr.write_record(&out)?;

    let mut fields: Vec<String> = Vec::with_capacity(out.len());
    for r in &corpus.records {
        fields.clear();
        let mut extra = r.extra.iter();
        for &h in &header {
            let value = if h == mapping.commit_id {
                r.commit_id.clone()
            } else if h == mapping.timestamp {
                r.timestamp.to_string()
            } else if h == mapping.la {
                r.la.to_string()
            } else if h == mapping.ld {
                r.ld.to_string()
            } else if h == mapping.buggy {
                if r.buggy { "1" } else { "0" }.to_string()
            } else if let Some(q) = Qid::ALL.iter().find(|&&q| mapping.qid_column(q) == h) {
                r.qid(*q).map(|v| v.to_string()).unwrap_or_default()
            } else {
                extra.next().cloned().unwrap_or_default()
            };
            fields.push(value);
        }
        fields.push(r.churn.to_string());
        fields.push(r.ratio.to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

fn is_mapped(mapping: &ColumnMapping, column: &str) -> bool {
    [&mapping.commit_id, &mapping.timestamp, &mapping.la, &mapping.ld, &mapping.buggy]
        .iter()
        .any(|c| c.as_str() == column)
        || Qid::ALL.iter().any(|&q| mapping.qid_column(q) == column)
}

/// Recomputes churn and ratio on every record.
pub fn derive_metrics(mut corpus: CommitCorpus) -> CommitCorpus {
    corpus.records.iter_mut().for_each(CommitRecord::derive);
    corpus
}

/// Records in `(timestamp, commit_id)` order.
pub fn sorted_chronologically(corpus: &CommitCorpus) -> Vec<CommitRecord> {
    let mut records = corpus.records.clone();
    records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.commit_id.cmp(&b.commit_id)));
    records
}

/// Splits into the first `floor(n * train_fraction)` records by time and the rest.
pub fn chronological_split(corpus: &CommitCorpus, train_fraction: f64) -> Result<(CommitCorpus, CommitCorpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut records = sorted_chronologically(corpus);
    let cut = (records.len() as f64 * train_fraction).floor() as usize;
    let test = records.split_off(cut);
    Ok((corpus.with_records(records), corpus.with_records(test)))
}
