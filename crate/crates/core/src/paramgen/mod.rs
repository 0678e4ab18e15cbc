//! Per-cluster anonymization parameters: wire format, validation, the local
//! fallback generator and batch generation over all clusters.
//!
//! Wire format (one JSON object per cluster):
//!
//! ```json
//! {
//!   "cluster_id": "ndev|2",
//!   "churn_mixture": {"components": [{"weight": 1.0, "mean": 78.0, "std": 40.0}], "min": 3, "max": 410},
//!   "ratio_beta": {"alpha": 2.1, "beta": 2.9},
//!   "constraints": {"non_negative": true, "la_plus_ld_equals_churn": true}
//! }
//! ```

mod client;
mod prompt;

pub use client::{
    extract_json_object, generate_all_params, request_params, ClusterFailure, EndpointError, HttpModelClient, ModelClient,
    ModelEndpointConfig, ParamGenError, ParamPolicy, ParamsOutcome,
};
pub use prompt::{build_prompt, Prompt, SYSTEM_MESSAGE};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::binning::ClusterKey;
use crate::clusterstats::ClusterStats;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;
pub const MAX_COMPONENTS: usize = 3;
/// Normal-consistent scale factor: IQR / 1.349 estimates sigma.
const IQR_TO_SIGMA: f64 = 1.349;
const MIN_FALLBACK_STD: f64 = 1.0;
const BETA_CLAMP: (f64, f64) = (0.5, 100.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("schema violation at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("cluster id mismatch: expected {expected}, got {found}")]
    ClusterIdMismatch { expected: String, found: String },
    #[error("mixture weights sum to {sum}, not 1")]
    WeightSumError { sum: f64 },
}

impl ParamError {
    /// Short category name, stable for fixtures and reports.
    pub fn category(&self) -> &'static str {
        match self {
            ParamError::SchemaViolation { .. } => "SchemaViolation",
            ParamError::ClusterIdMismatch { .. } => "ClusterIdMismatch",
            ParamError::WeightSumError { .. } => "WeightSumError",
        }
    }

    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ParamError::SchemaViolation { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnMixture {
    pub components: Vec<MixtureComponent>,
    #[serde(rename = "min")]
    pub min_churn: u64,
    #[serde(rename = "max")]
    pub max_churn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBeta {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub non_negative: bool,
    pub la_plus_ld_equals_churn: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Self { non_negative: true, la_plus_ld_equals_churn: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationParams {
    pub cluster_id: ClusterKey,
    pub churn_mixture: ChurnMixture,
    pub ratio_beta: RatioBeta,
    pub constraints: Constraints,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct Wire<'a> {
    cluster_id: &'a ClusterKey,
    churn_mixture: &'a ChurnMixture,
    ratio_beta: &'a RatioBeta,
    constraints: &'a Constraints,
}

impl AnonymizationParams {
    /// The four-field object a model is asked to return (no provenance).
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(&Wire {
            cluster_id: &self.cluster_id,
            churn_mixture: &self.churn_mixture,
            ratio_beta: &self.ratio_beta,
            constraints: &self.constraints,
        })
        .expect("params serialize")
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value, ParamError> {
    obj.get(name).ok_or_else(|| ParamError::schema(path, "missing field"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ParamError> {
    v.as_object().ok_or_else(|| ParamError::schema(path, "expected an object"))
}

fn finite_number(obj: &Map<String, Value>, name: &str, path: &str) -> Result<f64, ParamError> {
    let path = format!("{path}.{name}");
    let v = field(obj, name, &path)?;
    let x = v.as_f64().ok_or_else(|| ParamError::schema(&path, "expected a number"))?;
    if !x.is_finite() {
        return Err(ParamError::schema(&path, "expected a finite number"));
    }
    Ok(x)
}

fn non_negative_integer(obj: &Map<String, Value>, name: &str, path: &str) -> Result<u64, ParamError> {
    let x = finite_number(obj, name, path)?;
    let path = format!("{path}.{name}");
    if x < 0.0 || x.fract() != 0.0 || x > 9_007_199_254_740_992.0 {
        return Err(ParamError::schema(path, format!("expected a non-negative integer, got {x}")));
    }
    Ok(x as u64)
}

/// Parses and checks a parameter object. Nothing is repaired: any violation
/// rejects the whole object. Unknown extra fields are ignored.
pub fn validate_params(raw: &str, expected: &ClusterKey) -> Result<AnonymizationParams, ParamError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| ParamError::schema("<root>", format!("invalid JSON: {e}")))?;
    let root = as_object(&value, "<root>")?;

    let found = field(root, "cluster_id", "cluster_id")?
        .as_str()
        .ok_or_else(|| ParamError::schema("cluster_id", "expected a string"))?;
    if found != expected.to_string() {
        return Err(ParamError::ClusterIdMismatch { expected: expected.to_string(), found: found.to_string() });
    }

    let mixture = as_object(field(root, "churn_mixture", "churn_mixture")?, "churn_mixture")?;
    let components = field(mixture, "components", "churn_mixture.components")?
        .as_array()
        .ok_or_else(|| ParamError::schema("churn_mixture.components", "expected an array"))?;
    if components.is_empty() || components.len() > MAX_COMPONENTS {
        return Err(ParamError::schema(
            "churn_mixture",
            format!("expected 1–{MAX_COMPONENTS} components, got {}", components.len()),
        ));
    }
    let mut parsed = Vec::with_capacity(components.len());
    for (i, c) in components.iter().enumerate() {
        let path = format!("churn_mixture.components[{i}]");
        let c = as_object(c, &path)?;
        let weight = finite_number(c, "weight", &path)?;
        let mean = finite_number(c, "mean", &path)?;
        let std = finite_number(c, "std", &path)?;
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(ParamError::schema(format!("{path}.weight"), format!("weight must lie in (0, 1], got {weight}")));
        }
        if std <= 0.0 {
            return Err(ParamError::schema(format!("{path}.std"), format!("std must be positive, got {std}")));
        }
        parsed.push(MixtureComponent { weight, mean, std });
    }
    let min_churn = non_negative_integer(mixture, "min", "churn_mixture")?;
    let max_churn = non_negative_integer(mixture, "max", "churn_mixture")?;
    if min_churn > max_churn {
        return Err(ParamError::schema("churn_mixture", format!("min {min_churn} exceeds max {max_churn}")));
    }
    let sum: f64 = parsed.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(ParamError::WeightSumError { sum });
    }

    let beta = as_object(field(root, "ratio_beta", "ratio_beta")?, "ratio_beta")?;
    let alpha_v = finite_number(beta, "alpha", "ratio_beta")?;
    let beta_v = finite_number(beta, "beta", "ratio_beta")?;
    if alpha_v <= 0.0 {
        return Err(ParamError::schema("ratio_beta.alpha", format!("must be positive, got {alpha_v}")));
    }
    if beta_v <= 0.0 {
        return Err(ParamError::schema("ratio_beta.beta", format!("must be positive, got {beta_v}")));
    }

    let constraints = as_object(field(root, "constraints", "constraints")?, "constraints")?;
    for flag in ["non_negative", "la_plus_ld_equals_churn"] {
        let path = format!("constraints.{flag}");
        if field(constraints, flag, &path)?.as_bool() != Some(true) {
            return Err(ParamError::schema(path, "must be true"));
        }
    }

    Ok(AnonymizationParams {
        cluster_id: *expected,
        churn_mixture: ChurnMixture { components: parsed, min_churn, max_churn },
        ratio_beta: RatioBeta { alpha: alpha_v, beta: beta_v },
        constraints: Constraints::default(),
        provenance: Provenance::Model,
    })
}

/// Deterministic moment-matched parameters computed from the summary alone.
///
/// Churn: one Gaussian at the median with `sigma = max(IQR / 1.349, 1)`,
/// bounded by the observed min and max. Ratio: Beta by method of moments
/// from the median and `(IQR / 1.349)^2`, both shapes clamped to `[0.5, 100]`.
pub fn fallback_params(stats: &ClusterStats) -> AnonymizationParams {
    let churn = &stats.churn;
    let std = ((churn.p75 - churn.p25) / IQR_TO_SIGMA).max(MIN_FALLBACK_STD);
    let min_churn = churn.min.max(0.0).round() as u64;
    let max_churn = (churn.max.max(0.0).round() as u64).max(min_churn);

    let m = stats.ratio.p50.clamp(0.0, 1.0);
    let sigma = (stats.ratio.p75 - stats.ratio.p25) / IQR_TO_SIGMA;
    let variance = sigma * sigma;
    let spread = m * (1.0 - m);
    // Method of moments: alpha + beta = m(1-m)/var - 1. A zero variance
    // drives both shapes to the upper clamp; an over-dispersed proxy (no
    // valid Beta) falls back to alpha + beta = 2.
    let concentration = if variance <= 0.0 { f64::INFINITY } else { spread / variance - 1.0 };
    let concentration = if concentration > 0.0 { concentration } else { 2.0 };
    let shape = |frac: f64| {
        if frac <= 0.0 {
            BETA_CLAMP.0
        } else {
            (frac * concentration).clamp(BETA_CLAMP.0, BETA_CLAMP.1)
        }
    };

    AnonymizationParams {
        cluster_id: stats.cluster_id,
        churn_mixture: ChurnMixture {
            components: vec![MixtureComponent { weight: 1.0, mean: churn.p50, std }],
            min_churn,
            max_churn,
        },
        ratio_beta: RatioBeta { alpha: shape(m), beta: shape(1.0 - m) },
        constraints: Constraints::default(),
        provenance: Provenance::Fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterstats::QuantileSummary;
    use crate::corpus::Qid;

    fn key() -> ClusterKey {
        ClusterKey::new(Qid::Ndev, 2)
    }

    fn flat(v: f64) -> QuantileSummary {
        QuantileSummary { min: v, p5: v, p25: v, p50: v, p75: v, p95: v, max: v }
    }

    fn stats(churn: QuantileSummary, ratio: QuantileSummary) -> ClusterStats {
        ClusterStats { cluster_id: key(), bin_left: Some(3.0), bin_right: Some(5.0), count: 10, la: flat(1.0), ld: flat(1.0), churn, ratio }
    }

    fn body(components: &str, alpha: f64, beta: f64) -> String {
        format!(
            r#"{{"cluster_id":"ndev|2","churn_mixture":{{"components":{components},"min":10,"max":300}},"ratio_beta":{{"alpha":{alpha},"beta":{beta}}},"constraints":{{"non_negative":true,"la_plus_ld_equals_churn":true}}}}"#
        )
    }

    #[test]
    fn accepts_two_equal_components() {
        let raw = body(r#"[{"weight":0.5,"mean":60,"std":5},{"weight":0.5,"mean":200,"std":8}]"#, 2.0, 3.0);
        let p = validate_params(&raw, &key()).unwrap();
        assert_eq!(p.churn_mixture.components.len(), 2);
        assert_eq!(p.provenance, Provenance::Model);
        assert_eq!(p.ratio_beta, RatioBeta { alpha: 2.0, beta: 3.0 });
    }

    #[test]
    fn rejects_weight_sum() {
        let raw = body(r#"[{"weight":0.7,"mean":60,"std":5},{"weight":0.7,"mean":200,"std":8}]"#, 2.0, 3.0);
        assert!(matches!(validate_params(&raw, &key()), Err(ParamError::WeightSumError { .. })));
    }

    #[test]
    fn rejects_four_components() {
        let c = r#"{"weight":0.25,"mean":60,"std":5}"#;
        let raw = body(&format!("[{c},{c},{c},{c}]"), 2.0, 3.0);
        match validate_params(&raw, &key()) {
            Err(ParamError::SchemaViolation { field, .. }) => assert_eq!(field, "churn_mixture"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_cluster_mismatch() {
        let raw = body(r#"[{"weight":1,"mean":60,"std":5}]"#, 2.0, 3.0);
        let other = ClusterKey::new(Qid::Ndev, 3);
        assert!(matches!(validate_params(&raw, &other), Err(ParamError::ClusterIdMismatch { .. })));
    }

    #[test]
    fn rejects_non_positive_shapes() {
        let raw = body(r#"[{"weight":1,"mean":60,"std":5}]"#, 0.0, 3.0);
        assert_eq!(validate_params(&raw, &key()).unwrap_err().category(), "SchemaViolation");
    }

    #[test]
    fn fallback_hand_computed() {
        let churn = QuantileSummary { min: 50.0, p5: 52.0, p25: 60.0, p50: 120.0, p75: 160.0, p95: 195.0, max: 200.0 };
        let p = fallback_params(&stats(churn, flat(0.5)));
        let c = p.churn_mixture.components[0];
        assert_eq!(c.mean, 120.0);
        assert!((c.std - 74.128984).abs() < 1e-5);
        assert_eq!((p.churn_mixture.min_churn, p.churn_mixture.max_churn), (50, 200));
        assert_eq!(p.provenance, Provenance::Fallback);
    }

    #[test]
    fn fallback_symmetric_ratio() {
        let p = fallback_params(&stats(flat(40.0), flat(0.5)));
        assert_eq!(p.ratio_beta.alpha, p.ratio_beta.beta);
        let spread = QuantileSummary { min: 0.1, p5: 0.2, p25: 0.4, p50: 0.5, p75: 0.6, p95: 0.8, max: 0.9 };
        let p = fallback_params(&stats(flat(40.0), spread));
        assert!((p.ratio_beta.alpha - p.ratio_beta.beta).abs() < 1e-12);
    }

    #[test]
    fn fallback_std_floor() {
        let p = fallback_params(&stats(flat(50.0), flat(0.3)));
        assert_eq!(p.churn_mixture.components[0].std, 1.0);
    }

    #[test]
    fn fallback_method_of_moments() {
        // m = 0.4, sigma = 0.2698/1.349 = 0.2 -> var 0.04, m(1-m) = 0.24, concentration 5.
        let ratio = QuantileSummary { min: 0.0, p5: 0.1, p25: 0.3, p50: 0.4, p75: 0.5698, p95: 0.9, max: 1.0 };
        let p = fallback_params(&stats(flat(40.0), ratio));
        assert!((p.ratio_beta.alpha - 2.0).abs() < 1e-9);
        assert!((p.ratio_beta.beta - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fallback_extreme_ratios_stay_valid() {
        for m in [0.0, 1.0] {
            let p = fallback_params(&stats(flat(40.0), flat(m)));
            assert!(p.ratio_beta.alpha >= 0.5 && p.ratio_beta.beta >= 0.5);
            assert!(validate_params(&p.to_wire_json(), &key()).is_ok());
        }
    }
}
