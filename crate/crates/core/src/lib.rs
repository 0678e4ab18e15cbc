//! Cluster-guided anonymization of just-in-time defect-prediction datasets.

pub mod binning;
pub mod clusterstats;
pub mod corpus;
pub mod paramgen;
pub mod privacy;
pub mod quantile;
pub mod regen;
pub mod rng;
pub mod utility;
pub mod pipeline;
pub mod synth;
