//! Predictive utility: SMOTEENN resampling, a Random Forest and F1 scoring.

mod experiment;
mod forest;
mod metrics;
mod smote_enn;

pub use experiment::{run_utility_experiment, Feature, UtilityConfig, UtilityReport};
pub use forest::{best_gini_split, train_random_forest, DecisionTree, Node, RFHyperparams, RandomForest, SplitCriterion};
pub use metrics::{f1_score, Confusion};
pub use smote_enn::{enn, smote, smote_enn, Resampled};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("corpus has a single class")]
    SingleClassCorpus,
    #[error("{0}")]
    Corpus(String),
}

/// A row-major labeled feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self, UtilityError> {
        if x.len() != y.len() {
            return Err(UtilityError::LengthMismatch(x.len(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }
}
