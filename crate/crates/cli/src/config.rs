//! Single-document JSON run configuration. Unknown keys are rejected so a
//! typo cannot silently fall back to a default; command-line flags override
//! the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prodehaze_core::synthesis::{DepthKind, HazeRanges};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub beta_range: (f64, f64),
    pub atmospheric_range: (f64, f64),
    /// Per-channel multiplier on the sampled atmospheric base. Anything
    /// other than all-ones gives the haze a global color cast (the
    /// color-shift probe sets use this).
    pub atmospheric_tint: [f64; 3],
    /// Permute the tint channels per image so the cast direction varies.
    pub tint_shuffle: bool,
    pub depth_kinds: Vec<DepthKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 20,
            height: 32,
            width: 32,
            beta_range: (0.6, 1.8),
            atmospheric_range: (0.7, 1.0),
            atmospheric_tint: [1.0, 1.0, 1.0],
            tint_shuffle: false,
            depth_kinds: vec![
                DepthKind::LinearRamp,
                DepthKind::Radial,
                DepthKind::ValueNoise,
            ],
        }
    }
}

impl SynthConfig {
    pub fn haze_ranges(&self) -> HazeRanges {
        HazeRanges {
            beta: self.beta_range,
            atmospheric: self.atmospheric_range,
            tint: self.atmospheric_tint,
            tint_shuffle: self.tint_shuffle,
            depth_kinds: self.depth_kinds.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_count: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_count: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTrainConfig {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub spr: StageTrainConfig,
    pub hcr: StageTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spr: StageTrainConfig {
                steps: 200,
                lr: 0.3,
            },
            hcr: StageTrainConfig {
                steps: 200,
                lr: 0.12,
            },
        }
    }
}

/// The resolved run configuration every command echoes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_root: PathBuf,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub dcp_patch_size: usize,
    pub k_fraction: f64,
    pub window: (usize, usize),
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dataset_root: PathBuf::from("data/toy"),
            out_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            dcp_patch_size: 3,
            k_fraction: 0.25,
            window: (4, 4),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Flags win over the file.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = o.to_path_buf();
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
