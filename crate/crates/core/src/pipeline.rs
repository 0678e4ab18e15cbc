//! End-to-end runs: bin, summarize, parameters, regenerate, evaluate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::binning::{cluster_corpus, ClusterAssignment, ClusterKey, DEFAULT_BINS};
use crate::clusterstats::{summarize_all, ClusterStats};
use crate::corpus::{load_corpus, write_corpus, ColumnMapping, CommitCorpus};
use crate::paramgen::{generate_all_params, HttpModelClient, ModelClient, ModelEndpointConfig, ParamGenError, ParamPolicy, ParamsOutcome, Provenance};
use crate::privacy::{compute_ipr, AttackerConfig, PrivacyReport};
use crate::regen::{anonymize_corpus, RunMetadata};
use crate::rng::PRNG_ALGORITHM_ID;
use crate::utility::{run_utility_experiment, UtilityConfig, UtilityReport};

/// IPR at or above which a result reaches privacy level 1.
pub const PRIVACY_LEVEL_1: f64 = 65.0;
/// IPR at or above which a result reaches privacy level 2.
pub const PRIVACY_LEVEL_2: f64 = 80.0;

pub const TOOL_NAME: &str = "jit-anon";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Endpoint(ParamGenError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Endpoint(ParamGenError::NoEndpoint(_)) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Endpoint(ParamGenError::EndpointExhausted(_)) => 3,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub mapping: ColumnMapping,
    pub delimiter: char,
    pub n_bins: usize,
    pub attacker: AttackerConfig,
    pub utility: UtilityConfig,
    /// Skip the utility experiment.
    pub skip_utility: bool,
    pub policy: ParamPolicy,
    pub endpoint: Option<ModelEndpointConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("out"),
            mapping: ColumnMapping::default(),
            delimiter: ',',
            n_bins: DEFAULT_BINS,
            attacker: AttackerConfig::default(),
            utility: UtilityConfig::default(),
            skip_utility: false,
            policy: ParamPolicy::FallbackOnly,
            endpoint: None,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn delimiter_byte(&self) -> Result<u8, PipelineError> {
        u8::try_from(self.delimiter).map_err(|_| PipelineError::Config(format!("delimiter {:?} is not a single byte", self.delimiter)))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let input = self.input.as_ref().ok_or_else(|| PipelineError::Config("no input file given".into()))?;
        if !input.is_file() {
            return Err(PipelineError::Config(format!("input {} does not exist", input.display())));
        }
        if self.n_bins < 2 {
            return Err(PipelineError::Config("n_bins must be at least 2".into()));
        }
        self.delimiter_byte()?;
        Ok(())
    }

    pub fn load_input(&self) -> Result<CommitCorpus, PipelineError> {
        let input = self.input.as_ref().ok_or_else(|| PipelineError::Config("no input file given".into()))?;
        load_corpus(input, &self.mapping, self.delimiter_byte()?).map_err(data_err)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A JSON report stamped with the run's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub master_seed: u64,
    #[serde(flatten)]
    pub body: T,
}

fn to_json<T: Serialize>(seed: u64, body: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(&Stamped { master_seed: seed, body }).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub provenance: Provenance,
    pub sha256: String,
}

/// File name for a cluster's parameters: `ndev|2` becomes `ndev_2.json`, `ndev|-1` becomes `ndev_missing.json`.
pub fn params_file_name(key: &ClusterKey) -> String {
    if key.is_out_of_range() {
        format!("{}_missing.json", key.qid)
    } else {
        format!("{}_{}.json", key.qid, key.bin_index)
    }
}

/// Builds the endpoint client required by `policy`.
pub fn model_client(policy: ParamPolicy, endpoint: Option<&ModelEndpointConfig>) -> Option<HttpModelClient> {
    match policy {
        ParamPolicy::FallbackOnly => None,
        _ => endpoint.cloned().map(HttpModelClient::new),
    }
}

pub fn generate_params(
    stats: &BTreeMap<ClusterKey, ClusterStats>,
    policy: ParamPolicy,
    endpoint: Option<&ModelEndpointConfig>,
) -> Result<ParamsOutcome, PipelineError> {
    let client = model_client(policy, endpoint);
    generate_all_params(stats, client.as_ref().map(|c| c as &dyn ModelClient), policy).map_err(PipelineError::Endpoint)
}

/// Parameter files plus a manifest of their hashes. Returns the manifest bytes.
pub fn write_params(dir: &Path, seed: u64, outcome: &ParamsOutcome) -> Result<Vec<u8>, PipelineError> {
    let mut manifest: BTreeMap<String, ManifestEntry> = BTreeMap::new();
    for (key, p) in &outcome.params {
        let mut wire = p.to_wire_json();
        wire.push('\n');
        let file = params_file_name(key);
        write_atomic(&dir.join(&file), wire.as_bytes()).map_err(data_err)?;
        manifest.insert(key.to_string(), ManifestEntry { file, provenance: p.provenance, sha256: sha256_hex(wire.as_bytes()) });
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        clusters: &'a BTreeMap<String, ManifestEntry>,
        failures: &'a [crate::paramgen::ClusterFailure],
    }
    let bytes = to_json(seed, &Manifest { clusters: &manifest, failures: &outcome.failures });
    write_atomic(&dir.join("manifest.json"), &bytes).map_err(data_err)?;
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub approach: String,
    pub mean_f1_percent: f64,
    pub ipr_percent: f64,
    /// 2 when IPR ≥ 80, 1 when IPR ≥ 65, else 0.
    pub privacy_level: u8,
}

pub fn privacy_level(ipr_percent: f64) -> u8 {
    if ipr_percent >= PRIVACY_LEVEL_2 {
        2
    } else if ipr_percent >= PRIVACY_LEVEL_1 {
        1
    } else {
        0
    }
}

/// Rows for the original data (IPR 0, the identity release) and the anonymized data.
pub fn report_summary(approach: &str, privacy: &PrivacyReport, utility_orig: &UtilityReport, utility_anon: &UtilityReport) -> Vec<SummaryRow> {
    vec![
        SummaryRow { approach: "original".into(), mean_f1_percent: utility_orig.mean_f1 * 100.0, ipr_percent: 0.0, privacy_level: 0 },
        SummaryRow {
            approach: approach.into(),
            mean_f1_percent: utility_anon.mean_f1 * 100.0,
            ipr_percent: privacy.ipr_percent,
            privacy_level: privacy_level(privacy.ipr_percent),
        },
    ]
}

pub fn summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["approach", "mean_f1_percent", "ipr_percent", "privacy_level"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.approach.clone(),
            format!("{:.1}", r.mean_f1_percent),
            format!("{:.1}", r.ipr_percent),
            r.privacy_level.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Everything produced by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub original: CommitCorpus,
    pub anonymized: CommitCorpus,
    pub assignment: ClusterAssignment,
    pub params: ParamsOutcome,
    pub privacy: PrivacyReport,
    pub utility: Option<(UtilityReport, UtilityReport)>,
    pub summary: Vec<SummaryRow>,
    pub out: PathBuf,
}

pub fn approach_name(outcome: &ParamsOutcome) -> &'static str {
    if outcome.count(Provenance::Model) > 0 {
        "cluster-guided-model"
    } else {
        "cluster-guided-fallback"
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let original = config.load_input()?;
    run_pipeline_on(config, original)
}

/// [`run_pipeline`] on an already-loaded corpus.
pub fn run_pipeline_on(config: &RunConfig, original: CommitCorpus) -> Result<PipelineOutcome, PipelineError> {
    if original.is_empty() {
        return Err(data_err("input corpus is empty"));
    }
    let out = &config.out;
    let seed = config.seed;
    let delimiter = config.delimiter_byte()?;

    log::info!("binning {} commits into {} parts per QID", original.len(), config.n_bins);
    let assignment = cluster_corpus(&original, config.n_bins).map_err(data_err)?;
    write_atomic(&out.join("clusters.json"), &to_json(seed, &assignment)).map_err(data_err)?;

    let stats = summarize_all(&original, &assignment).map_err(data_err)?;
    let stats_list: Vec<&ClusterStats> = stats.values().collect();
    write_atomic(&out.join("cluster_stats.json"), &to_json(seed, &serde_json::json!({ "clusters": stats_list }))).map_err(data_err)?;

    log::info!("generating parameters for {} clusters ({:?})", stats.len(), config.policy);
    let params = generate_params(&stats, config.policy, config.endpoint.as_ref())?;
    let manifest = write_params(&out.join("params"), seed, &params)?;

    let anonymized = anonymize_corpus(&original, &assignment, &params.params).map_err(data_err)?;
    let mut csv = Vec::new();
    write_corpus(&anonymized, &mut csv, delimiter).map_err(data_err)?;
    write_atomic(&out.join("anonymized.csv"), &csv).map_err(data_err)?;
    let meta = RunMetadata {
        tool: TOOL_NAME.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        prng_algorithm: PRNG_ALGORITHM_ID.into(),
        params_manifest_sha256: sha256_hex(&manifest),
        master_seed: seed,
        records: anonymized.len(),
        clusters: params.params.len(),
        model_params: params.count(Provenance::Model),
        fallback_params: params.count(Provenance::Fallback),
    };
    write_atomic(&out.join("anonymized.meta.json"), &to_json(seed, &meta)).map_err(data_err)?;

    log::info!("evaluating privacy");
    let privacy = compute_ipr(&original, &anonymized, &config.attacker).map_err(data_err)?;
    write_atomic(&out.join("privacy.json"), &to_json(seed, &privacy)).map_err(data_err)?;

    let approach = approach_name(&params);
    let (utility, summary) = if config.skip_utility {
        (None, Vec::new())
    } else {
        log::info!("evaluating utility ({} trees)", config.utility.forest.n_trees);
        let orig_u = run_utility_experiment(&original, &config.utility, seed).map_err(data_err)?;
        let anon_u = run_utility_experiment(&anonymized, &config.utility, seed).map_err(data_err)?;
        write_atomic(&out.join("utility_original.json"), &to_json(seed, &orig_u)).map_err(data_err)?;
        write_atomic(&out.join("utility_anonymized.json"), &to_json(seed, &anon_u)).map_err(data_err)?;
        let rows = report_summary(approach, &privacy, &orig_u, &anon_u);
        write_atomic(&out.join("summary.csv"), &summary_csv(&rows)).map_err(data_err)?;
        write_atomic(&out.join("summary.json"), &to_json(seed, &serde_json::json!({ "rows": rows }))).map_err(data_err)?;
        (Some((orig_u, anon_u)), rows)
    };

    Ok(PipelineOutcome { original, anonymized, assignment, params, privacy, utility, summary, out: out.clone() })
}
