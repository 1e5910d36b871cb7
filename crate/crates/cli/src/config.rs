use std::path::{Path, PathBuf};

use anyhow::Context;
use euclid_core::icnn::IcnnArchitecture;
use euclid_core::pipeline::{
    COARSE_TARGET_NODES, DEFAULT_BANDWIDTH, DEFAULT_BIAXIAL_RATIO, DEFAULT_HOLE_RADIUS,
    DEFAULT_RIDGE_PER_NODE, DESK_TARGET_NODES,
};
use euclid_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Every setting of a run. Loaded from TOML, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark material generating the data and serving as ground truth.
    pub model: String,
    pub specimen: SpecimenSection,
    pub noise: NoiseSection,
    pub krr: KrrSection,
    pub architecture: IcnnArchitecture,
    pub train: TrainConfig,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecimenSection {
    /// Node count of the simulation mesh.
    pub fine_nodes: usize,
    /// Node count of the measurement mesh the data is projected onto.
    pub coarse_nodes: usize,
    pub hole_radius: f64,
    pub biaxial_ratio: f64,
    pub validation_nodes: usize,
}

impl Default for SpecimenSection {
    fn default() -> Self {
        SpecimenSection {
            fine_nodes: DESK_TARGET_NODES,
            coarse_nodes: COARSE_TARGET_NODES,
            hole_radius: DEFAULT_HOLE_RADIUS,
            biaxial_ratio: DEFAULT_BIAXIAL_RATIO,
            validation_nodes: DESK_TARGET_NODES,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_u: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrrSection {
    pub bandwidth: f64,
    /// Ridge parameter per node of the fine mesh.
    pub ridge_per_node: f64,
}

impl Default for KrrSection {
    fn default() -> Self {
        KrrSection {
            bandwidth: DEFAULT_BANDWIDTH,
            ridge_per_node: DEFAULT_RIDGE_PER_NODE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub gamma_max: f64,
    pub samples: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            gamma_max: 1.0,
            samples: 51,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub models_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: "data".into(),
            models_dir: "models".into(),
            out_dir: "report".into(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "NH".into(),
            specimen: SpecimenSection::default(),
            noise: NoiseSection::default(),
            krr: KrrSection::default(),
            architecture: IcnnArchitecture::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| UsageError(format!("{e:#}")))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.noise.sigma_u >= 0.0) {
            return Err(UsageError(format!("sigma_u must be non-negative, got {}", self.noise.sigma_u)).into());
        }
        if !(self.evaluation.gamma_max > 0.0 && self.evaluation.gamma_max <= 1.0) {
            return Err(UsageError(format!("gamma_max {} outside (0, 1]", self.evaluation.gamma_max)).into());
        }
        if self.evaluation.samples < 2 {
            return Err(UsageError("evaluation.samples must be at least 2".into()).into());
        }
        self.train.validate()?;
        self.architecture.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("model = \"IH\"\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.model, "IH");
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.acceptance_margin, 0.2);
        assert_eq!(cfg.architecture.hidden_sizes, vec![64, 64, 64]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 7\n").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), RunConfig::default());
    }
}
