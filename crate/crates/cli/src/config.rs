use std::path::{Path, PathBuf};

use pose2imu::experiments::{Mix, OracleSpec};
use pose2imu::har::ClassifierConfig;
use pose2imu::imu_dsp::{Channel, FilterPolicy, ScalerPolicy};
use pose2imu::nn::{Topology, TrainConfig};
use pose2imu::pose_features::{JointSets, REGRESSION_WINDOW};
use pose2imu::regressor::{input_channels, RegressorSpec};
use pose2imu::skeleton::Placement;
use pose2imu::{Error, Result};
use serde::{Deserialize, Serialize};

/// Overrides on the standard network shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl TopologyOverrides {
    pub fn apply(&self, mut t: Topology) -> Topology {
        if let Some(k) = self.kernel_width {
            t.kernel_width = k;
        }
        if let Some(w) = &self.widths {
            t.widths = w.clone();
        }
        if let Some(d) = &self.dilations {
            t.dilations = d.clone();
        }
        if let Some(p) = self.dropout {
            t.dropout = p;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub placements: Vec<Placement>,
    pub channels: Vec<Channel>,
    pub filter: FilterPolicy,
    pub scaler: ScalerPolicy,
    pub window: usize,
    pub topology: TopologyOverrides,
    pub train: TrainConfig,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            placements: Placement::ALL.to_vec(),
            channels: vec![Channel::AccNorm],
            filter: FilterPolicy::Lowpass8,
            scaler: ScalerPolicy::Standard,
            window: REGRESSION_WINDOW,
            topology: TopologyOverrides::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarConfig {
    pub mix: Mix,
    /// Number of ranked users; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub channels: Vec<Channel>,
    pub filter: FilterPolicy,
}

impl Default for HarConfig {
    fn default() -> Self {
        HarConfig {
            mix: Mix::Sim,
            k: None,
            channels: vec![Channel::AccNorm],
            filter: FilterPolicy::Lowpass8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
    #[serde(default)]
    pub joint_sets: JointSets,
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub har: HarConfig,
    #[serde(default)]
    pub oracle: OracleSpec,
}

impl RunConfig {
    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out, &mut cfg.plan].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("`manifest` is not set".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("`out` is not set (use --out)".into()))
    }

    pub fn regressor_specs(&self) -> Result<Vec<RegressorSpec>> {
        let r = &self.regression;
        let mut specs = Vec::new();
        for &placement in &r.placements {
            for &channel in &r.channels {
                let joints = self.joint_sets.get(placement).to_vec();
                let base = Topology::standard(input_channels(joints.len()), 1);
                let spec = RegressorSpec {
                    placement,
                    channel,
                    topology: r.topology.apply(base),
                    joints,
                    scaler: r.scaler,
                    filter: r.filter,
                    window: r.window,
                };
                spec.validate()?;
                specs.push(spec);
            }
        }
        Ok(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[regression.topology]\nwidths = [8, 8]\ndilations = [1, 2]").unwrap();
        let specs = cfg.regressor_specs().unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].topology.widths, [8, 8]);
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[har]\nmixx = 1").is_err());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
