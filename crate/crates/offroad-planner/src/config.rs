//! Run configuration: one JSON document covering every module. Unknown keys
//! are rejected with the offending key path, missing keys fall back to the
//! documented defaults, and the fully resolved configuration is echoed to
//! `output_dir/config.resolved.json` so any run can be reproduced from its
//! output directory alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::MheConfig;
use crate::planner::{OptimSettings, PlannerConfig};
use crate::reward::{EventRewardConfig, MpcRewardConfig};
use crate::seqmodel::{Architecture, ModelConfig, TrainConfig};
use crate::uncertainty::{PairwiseDistance, UncertaintyWeights};
use crate::vehicle::ModelParams;
use crate::worldsim::WorldConfig;

/// Architecture dimensions plus the training hyperparameters, under the
/// `model` config key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden_mult: usize,
    pub var_min: f64,
    pub train: TrainConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            architecture: m.architecture,
            feature_dim: m.feature_dim,
            width: m.width,
            layers: m.layers,
            heads: m.heads,
            hidden_mult: m.hidden_mult,
            var_min: m.var_min,
            train: TrainConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            feature_dim: self.feature_dim,
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            hidden_mult: self.hidden_mult,
            var_min: self.var_min,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub members: usize,
    pub distance: PairwiseDistance,
    pub w_class: f64,
    pub w_bearing: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            members: 5,
            distance: PairwiseDistance::Kl,
            w_class: 1.0,
            w_bearing: 1.0,
        }
    }
}

impl EnsembleSection {
    pub fn weights(&self) -> UncertaintyWeights {
        UncertaintyWeights {
            w_class: self.w_class,
            w_bearing: self.w_bearing,
            distance: self.distance,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub event: EventRewardConfig,
    pub mpc: MpcRewardConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub vehicle: ModelParams,
    pub mhe: MheConfig,
    pub optimizer: OptimSettings,
    pub model: ModelSection,
    pub ensemble: EnsembleSection,
    pub reward: RewardSection,
    pub planner: PlannerConfig,
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            vehicle: ModelParams::default(),
            mhe: MheConfig::default(),
            optimizer: OptimSettings::default(),
            model: ModelSection::default(),
            ensemble: EnsembleSection::default(),
            reward: RewardSection::default(),
            planner: PlannerConfig::default(),
            world: WorldConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.planner.validate()?;
        self.reward.event.validate()?;
        self.reward.mpc.validate()?;
        self.model.model_config().validate()?;
        if self.ensemble.members < 2 {
            return Err(Error::Config("ensemble.members must be >= 2".into()));
        }
        Ok(())
    }

    /// Write the resolved configuration into `dir` and return its path.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.json");
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing resolved config: {e}")))?;
        json.push('\n');
        fs::write(&path, json)?;
        Ok(path)
    }
}

/// Parse a config document, reporting the offending key path on failure.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_resolves_to_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.ensemble.members, 5);
        assert_eq!(cfg.reward.mpc.beta_sigma, 10.0);
        assert_eq!(cfg.vehicle.cm1, 12.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = parse_config(r#"{"vehicle": {"c1": 0.5, "c9": 1.0}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vehicle"), "message: {msg}");
        assert!(msg.contains("c9"), "message: {msg}");

        let err = parse_config(r#"{"plannerr": {}}"#).unwrap_err();
        assert!(err.to_string().contains("plannerr"));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = parse_config(r#"{"reward": {"mpc": {"beta_sigma": 0.0}}}"#).unwrap();
        assert_eq!(cfg.reward.mpc.beta_sigma, 0.0);
        assert_eq!(cfg.reward.mpc.beta_v, 1.0);
        assert_eq!(cfg.reward.event.alpha_pos, 1.0);
    }

    #[test]
    fn vehicle_key_has_exact_field_names() {
        let json = serde_json::to_value(ModelParams::default()).unwrap();
        let mut keys: Vec<&str> =
            json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        let mut expected = vec!["c1", "c2", "cm1", "cm2", "cr2", "cr0", "g", "mass_scale"];
        expected.sort_unstable();
        assert_eq!(keys, expected);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(r#"{"seed": 7, "planner": {"horizon": 20}}"#).unwrap();
        let path = cfg.write_resolved(dir.path()).unwrap();
        let reloaded = load_config(&path).unwrap();
        assert_eq!(reloaded.seed, 7);
        assert_eq!(reloaded.planner.horizon, 20);
        let again = serde_json::to_string_pretty(&reloaded).unwrap();
        let first = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_config(r#"{"vehicle": {"cm1": -1.0}}"#).is_err());
        assert!(parse_config(r#"{"planner": {"goal_radius": 0.0}}"#).is_err());
        assert!(parse_config(r#"{"ensemble": {"members": 1}}"#).is_err());
    }
}
