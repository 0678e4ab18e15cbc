use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{chronological_split, CommitCorpus, CommitRecord, Qid};
use crate::quantile::{quantile_sorted, sorted_finite};
use crate::rng::{child_seed, SeededStream};

use super::forest::{train_random_forest, RFHyperparams};
use super::metrics::Confusion;
use super::smote_enn::smote_enn;
use super::{Dataset, UtilityError};

/// A classifier input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Feature {
    Qid(Qid),
    La,
    Ld,
}

impl Feature {
    /// The ten QIDs followed by la and ld.
    pub fn default_set() -> Vec<Feature> {
        Qid::ALL.into_iter().map(Feature::Qid).chain([Feature::La, Feature::Ld]).collect()
    }

    fn raw(self, r: &CommitRecord) -> Option<f64> {
        match self {
            Feature::Qid(q) => r.qid(q),
            Feature::La => Some(r.la as f64),
            Feature::Ld => Some(r.ld as f64),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Qid(q) => write!(f, "{q}"),
            Feature::La => f.write_str("la"),
            Feature::Ld => f.write_str("ld"),
        }
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "la" => Ok(Feature::La),
            "ld" => Ok(Feature::Ld),
            other => other.parse().map(Feature::Qid).map_err(|_| format!("unknown feature `{other}`")),
        }
    }
}

impl TryFrom<String> for Feature {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub n_runs: usize,
    pub sample_size: usize,
    pub train_fraction: f64,
    pub k_smote: usize,
    pub k_enn: usize,
    pub features: Vec<Feature>,
    pub forest: RFHyperparams,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            n_runs: 5,
            sample_size: 500,
            train_fraction: 0.8,
            k_smote: 5,
            k_enn: 3,
            features: Feature::default_set(),
            forest: RFHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub per_run_f1: Vec<f64>,
    pub mean_f1: f64,
    pub n_runs: usize,
    pub sample_size: usize,
    pub seed: u64,
    /// Forest seed of each run.
    pub seeds: Vec<u64>,
    pub features: Vec<Feature>,
    pub hyperparameters: RFHyperparams,
    pub train_rows: usize,
    pub test_rows: usize,
    pub confusion: Vec<Confusion>,
    /// The test split holds a single class.
    pub single_class_test: bool,
    /// Runs whose sample could not be resampled (fewer than two minority rows).
    pub degenerate_runs: Vec<usize>,
}

/// Feature matrix with missing values replaced by the given per-column fill.
fn matrix(records: &[CommitRecord], features: &[Feature], fill: &[f64]) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| features.iter().zip(fill).map(|(f, v)| f.raw(r).unwrap_or(*v)).collect())
        .collect()
}

/// Chronological split, then `n_runs` of: sample with replacement from the
/// training split, SMOTEENN, train the forest and score F1 on the test split.
pub fn run_utility_experiment(corpus: &CommitCorpus, config: &UtilityConfig, seed: u64) -> Result<UtilityReport, UtilityError> {
    if config.features.is_empty() || config.n_runs == 0 || config.sample_size == 0 {
        return Err(UtilityError::InvalidHyperparams("features, n_runs and sample_size must be non-empty".into()));
    }
    config.forest.validate(config.features.len())?;
    let pos = corpus.records.iter().filter(|r| r.buggy).count();
    if pos == 0 || pos == corpus.len() {
        return Err(UtilityError::SingleClassCorpus);
    }
    let (train, test) = chronological_split(corpus, config.train_fraction).map_err(|e| UtilityError::Corpus(e.to_string()))?;
    if train.is_empty() || test.is_empty() {
        return Err(UtilityError::EmptyTrainingSet);
    }

    // Training-split medians fill missing values in both splits.
    let fill: Vec<f64> = config
        .features
        .iter()
        .map(|f| quantile_sorted(&sorted_finite(train.records.iter().filter_map(|r| f.raw(r))), 0.5).unwrap_or(0.0))
        .collect();
    let train_x = matrix(&train.records, &config.features, &fill);
    let train_y: Vec<bool> = train.records.iter().map(|r| r.buggy).collect();
    let test_x = matrix(&test.records, &config.features, &fill);
    let test_y: Vec<bool> = test.records.iter().map(|r| r.buggy).collect();
    let test_pos = test_y.iter().filter(|&&b| b).count();

    let mut per_run_f1 = Vec::with_capacity(config.n_runs);
    let mut seeds = Vec::with_capacity(config.n_runs);
    let mut confusion = Vec::with_capacity(config.n_runs);
    let mut degenerate_runs = Vec::new();
    for run in 0..config.n_runs {
        let run_seed = child_seed(seed, run as u64);
        let mut sampler = SeededStream::new(child_seed(run_seed, 0));
        let picks: Vec<usize> = (0..config.sample_size).map(|_| sampler.next_below(train_x.len())).collect();
        let sample = Dataset {
            x: picks.iter().map(|&i| train_x[i].clone()).collect(),
            y: picks.iter().map(|&i| train_y[i]).collect(),
        };
        let resampled = smote_enn(&sample, config.k_smote, config.k_enn, child_seed(run_seed, 1));
        if resampled.degenerate {
            log::warn!("run {run}: minority class too small to resample");
            degenerate_runs.push(run);
        }
        let hp = RFHyperparams { rng_seed: child_seed(run_seed, 2), ..config.forest.clone() };
        let forest = train_random_forest(&resampled.data, &hp)?;
        let c = Confusion::from_predictions(&forest.predict_all(&test_x), &test_y)?;
        per_run_f1.push(c.f1());
        confusion.push(c);
        seeds.push(hp.rng_seed);
    }
    let mean_f1 = per_run_f1.iter().sum::<f64>() / per_run_f1.len() as f64;
    Ok(UtilityReport {
        per_run_f1,
        mean_f1,
        n_runs: config.n_runs,
        sample_size: config.sample_size,
        seed,
        seeds,
        features: config.features.clone(),
        hyperparameters: config.forest.clone(),
        train_rows: train.len(),
        test_rows: test.len(),
        confusion,
        single_class_test: test_pos == 0 || test_pos == test_y.len(),
        degenerate_runs,
    })
}
