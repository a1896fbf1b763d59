//! Strict JSON experiment configuration (`schema: 1`).
//!
//! One config drives one experiment. The schema is documented in the
//! repository README; unknown keys are rejected, and validation reports
//! every problem it finds, not just the first.

use serde::{Deserialize, Serialize};

use crate::chain::ChainDoc;
use crate::diffusion::{Boundary, Drift};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ChainCertify,
    ChainLimits,
    ChainBounds,
    Diffusion,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ChainCertify => "chain_certify",
            ExperimentKind::ChainLimits => "chain_limits",
            ExperimentKind::ChainBounds => "chain_bounds",
            ExperimentKind::Diffusion => "diffusion",
        }
    }
}

/// Chain model given inline or as a path to a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSource {
    Inline(ChainDoc),
    Path(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionDoc {
    pub drift: Drift,
    pub boundary: Boundary,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_cap: Option<f64>,
    #[serde(default = "default_true")]
    pub bridge_correction: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionEstimator {
    Survival,
    ConditionedLaw,
    QuasiErgodic,
}

/// Kind-specific parameters; validation enforces which fields each kind
/// requires.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    // chain_certify / chain_bounds
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    // chain_limits
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasi_ergodic_horizon: Option<usize>,
    // chain_bounds
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_t_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_state: Option<String>,
    // diffusion
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<DiffusionEstimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionDoc>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// Collects every validation error; empty means valid.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema != SCHEMA_VERSION {
            errs.push(format!(
                "schema: expected {SCHEMA_VERSION}, got {}",
                self.schema
            ));
        }
        let p = &self.params;
        if let Some(tol) = p.tol {
            if !(tol > 0.0) {
                errs.push(format!("params.tol: must be positive, got {tol}"));
            }
        }
        match self.kind {
            ExperimentKind::ChainCertify | ExperimentKind::ChainLimits
            | ExperimentKind::ChainBounds => {
                if self.chain.is_none() {
                    errs.push("chain: required for chain experiment kinds".into());
                }
                if self.diffusion.is_some() {
                    errs.push("diffusion: not allowed for chain experiment kinds".into());
                }
                if let Some(ChainSource::Path(path)) = &self.chain {
                    if !std::path::Path::new(path).exists() {
                        errs.push(format!("chain: referenced file not found: {path}"));
                    }
                }
            }
            ExperimentKind::Diffusion => {
                if self.diffusion.is_none() {
                    errs.push("diffusion: required for kind diffusion".into());
                }
                if self.chain.is_some() {
                    errs.push("chain: not allowed for kind diffusion".into());
                }
                if self.seed.is_none() {
                    errs.push("seed: required for kind diffusion".into());
                }
            }
        }
        match self.kind {
            ExperimentKind::ChainCertify => {
                if p.t0_max.map_or(false, |v| v == 0) {
                    errs.push("params.t0_max: must be at least 1".into());
                }
                if p.horizon.map_or(false, |v| v == 0) {
                    errs.push("params.horizon: must be at least 1".into());
                }
            }
            ExperimentKind::ChainLimits => {
                if p.t_max.map_or(false, |v| v == 0) {
                    errs.push("params.t_max: must be at least 1".into());
                }
            }
            ExperimentKind::ChainBounds => {
                if p.big_t_grid.as_ref().map_or(false, |g| g.is_empty()) {
                    errs.push("params.big_t_grid: must be nonempty when given".into());
                }
            }
            ExperimentKind::Diffusion => {
                if p.estimator.is_none() {
                    errs.push("params.estimator: required for kind diffusion".into());
                }
                if p.x0.is_none() {
                    errs.push("params.x0: required for kind diffusion".into());
                }
                match p.n_paths {
                    None => errs.push("params.n_paths: required for kind diffusion".into()),
                    Some(0) => errs.push("params.n_paths: must be at least 1".into()),
                    _ => {}
                }
                if let Some(d) = &self.diffusion {
                    if !(d.dt > 0.0) {
                        errs.push(format!("diffusion.dt: must be positive, got {}", d.dt));
                    }
                    if !(d.horizon > 0.0) {
                        errs.push(format!(
                            "diffusion.horizon: must be positive, got {}",
                            d.horizon
                        ));
                    }
                }
                if matches!(
                    p.estimator,
                    Some(DiffusionEstimator::ConditionedLaw)
                        | Some(DiffusionEstimator::QuasiErgodic)
                ) {
                    match &p.bin_edges {
                        None => errs.push(
                            "params.bin_edges: required for histogram estimators".into(),
                        ),
                        Some(edges) => {
                            if edges.len() < 2 {
                                errs.push("params.bin_edges: need at least two edges".into());
                            }
                            if edges.windows(2).any(|w| w[1] <= w[0]) {
                                errs.push("params.bin_edges: must be strictly ascending".into());
                            }
                        }
                    }
                }
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigValidation(errs))
        }
    }

    /// Resolves the chain model, reading the referenced file when needed.
    pub fn chain_doc(&self) -> Result<ChainDoc> {
        match &self.chain {
            Some(ChainSource::Inline(doc)) => Ok(doc.clone()),
            Some(ChainSource::Path(path)) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!(
                        "chain file {path}: {e} (line {}, column {})",
                        e.line(),
                        e.column()
                    ))
                })
            }
            None => Err(Error::Config("config has no chain model".into())),
        }
    }
}

/// Parses and validates a config file, reporting parse errors with
/// line/column and schema violations with field paths.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: {e} (line {}, column {})",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_a_json() -> serde_json::Value {
        serde_json::json!({
            "states": ["a", "b", "bdry"],
            "kernel": [
                [0.5, 0.3, 0.2],
                [0.4, 0.4, 0.2],
                [0.0, 0.0, 1.0]
            ],
            "schedule": {"kind": "constant", "sets": {"0": ["bdry"]}}
        })
    }

    #[test]
    fn minimal_certify_config_round_trips() {
        let v = serde_json::json!({
            "schema": 1,
            "kind": "chain_certify",
            "chain": chain_a_json(),
            "params": {"t0_max": 3, "horizon": 40}
        });
        let config: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(config.validation_errors().is_empty());
        let back = serde_json::to_string(&config).unwrap();
        let again: ExperimentConfig = serde_json::from_str(&back).unwrap();
        assert!(again.validation_errors().is_empty());
        assert_eq!(again.kind, ExperimentKind::ChainCertify);
    }

    #[test]
    fn diffusion_without_seed_names_the_field() {
        let v = serde_json::json!({
            "schema": 1,
            "kind": "diffusion",
            "diffusion": {
                "drift": {"name": "zero"},
                "boundary": {"name": "constant", "level": 0.0},
                "dt": 0.001,
                "horizon": 1.0
            },
            "params": {"estimator": "survival", "x0": 1.0, "n_paths": 1000}
        });
        let config: ExperimentConfig = serde_json::from_value(v).unwrap();
        let errs = config.validation_errors();
        assert!(errs.iter().any(|e| e.starts_with("seed:")), "{errs:?}");
    }

    #[test]
    fn unknown_field_is_rejected_with_its_path() {
        let v = serde_json::json!({
            "schema": 1,
            "kind": "chain_certify",
            "chain": chain_a_json(),
            "params": {"t0_maxx": 3}
        });
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err();
        assert!(err.to_string().contains("t0_maxx"), "{err}");
    }

    #[test]
    fn validation_collects_all_errors() {
        let v = serde_json::json!({
            "schema": 2,
            "kind": "diffusion",
            "params": {"tol": -1.0}
        });
        let config: ExperimentConfig = serde_json::from_value(v).unwrap();
        let errs = config.validation_errors();
        assert!(errs.len() >= 5, "{errs:?}");
    }
}
