//! Run configuration: one JSON document covering every pipeline stage.
//!
//! Unknown keys are rejected; missing keys fall back to defaults; semantic
//! validation collects every violation before reporting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{AugmentConfig, BridgeTrainConfig};
use crate::env::{EnvConfig, Policy};
use crate::error::{Error, Result};
use crate::planner::PlannerTrainConfig;
use crate::surrogate::SurrogateTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Lifecycles to simulate.
    pub n_traj: usize,
    pub policy: Policy,
    /// Seed for the 8:1:1 shuffle, independent of generation seeds.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_traj: 64,
            policy: Policy::Mixed,
            split_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeSection {
    pub augment: AugmentConfig,
    pub train: BridgeTrainConfig,
}

impl Default for BridgeSection {
    fn default() -> Self {
        BridgeSection {
            augment: AugmentConfig::default(),
            train: BridgeTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Random-baseline lifecycles and repeats per lifecycle.
    pub n_random_lifecycles: usize,
    pub repeats: usize,
    /// Seeds used for ablation arms.
    pub ablation_seeds: Vec<u64>,
    pub eta_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_random_lifecycles: 16,
            repeats: 2,
            ablation_seeds: vec![0, 1, 2],
            eta_grid: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            alpha_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub data: DataConfig,
    pub state_bridge: BridgeSection,
    pub utility_bridge: BridgeSection,
    pub surrogate: SurrogateTrainConfig,
    pub planner: PlannerTrainConfig,
    pub eval: EvalConfig,
    /// Directory all stage outputs live under.
    pub out_dir: String,
    /// Global seed folded into every stage-level seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            data: DataConfig::default(),
            state_bridge: BridgeSection::default(),
            utility_bridge: BridgeSection::default(),
            surrogate: SurrogateTrainConfig::default(),
            planner: PlannerTrainConfig::default(),
            eval: EvalConfig::default(),
            out_dir: "out".to_string(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Collect every semantic violation; Ok only when all pass.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.env.validate() {
            push_errs(&mut errs, "env", e);
        }
        if self.data.n_traj < 10 {
            errs.push("data.n_traj must be >= 10 for an 8:1:1 split".to_string());
        }
        for (name, section) in [
            ("state_bridge", &self.state_bridge),
            ("utility_bridge", &self.utility_bridge),
        ] {
            if let Err(e) = section.train.validate() {
                push_errs(&mut errs, name, e);
            }
            if section.augment.subseq_len < 2 {
                errs.push(format!("{name}.augment.subseq_len must be >= 2"));
            }
            if section.augment.alpha < 0.0 {
                errs.push(format!("{name}.augment.alpha must be >= 0"));
            }
        }
        if self.surrogate.eta < 0.0 {
            errs.push("surrogate.eta must be >= 0".to_string());
        }
        if self.surrogate.epochs < 1 || self.surrogate.batch_size < 1 {
            errs.push("surrogate.epochs and batch_size must be >= 1".to_string());
        }
        if self.planner.window < 1 {
            errs.push("planner.window must be >= 1".to_string());
        }
        if self.planner.epochs < 1 {
            errs.push("planner.epochs must be >= 1".to_string());
        }
        if self.eval.n_random_lifecycles < 1 || self.eval.repeats < 1 {
            errs.push("eval.n_random_lifecycles and repeats must be >= 1".to_string());
        }
        if self.eval.eta_grid.is_empty() || self.eval.alpha_grid.is_empty() {
            errs.push("eval grids must be nonempty".to_string());
        }
        if self.out_dir.is_empty() {
            errs.push("out_dir must be nonempty".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errs))
        }
    }
}

fn push_errs(errs: &mut Vec<String>, section: &str, e: Error) {
    match e {
        Error::ConfigList(list) => {
            errs.extend(list.into_iter().map(|m| format!("{section}: {m}")))
        }
        other => errs.push(format!("{section}: {other}")),
    }
}

/// Parse, fill defaults, and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(format!("config file {}", path.display())))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn roundtrip_identity() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_object_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load_config_str(r#"{"sede": 1}"#);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn all_violations_listed() {
        let mut cfg = RunConfig::default();
        cfg.env.dt = 10.0; // stability violation
        cfg.data.n_traj = 3;
        cfg.state_bridge.train.temperature = -1.0;
        cfg.surrogate.eta = -0.5;
        let err = cfg.validate().unwrap_err();
        match err {
            Error::ConfigList(list) => {
                assert!(list.len() >= 4, "expected >= 4 violations, got {list:?}");
                assert!(list.iter().any(|m| m.contains("stab")), "{list:?}");
            }
            other => panic!("expected ConfigList, got {other:?}"),
        }
    }

    fn load_config_str(s: &str) -> Result<RunConfig> {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("cfg.json");
        std::fs::write(&path, s).unwrap();
        load_config(&path)
    }
}
