//! Pipeline configuration file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gesture_channel::channel::StftConfig;
use gesture_channel::clustering::TrackerConfig;
use gesture_channel::cvae_model::CvaeTrainConfig;
use gesture_channel::poisson_model::PoissonTrainConfig;
use gesture_channel::scatter_geom::RfConfig;
use gesture_channel::skeleton::VelocityConfig;
use gesture_channel::synthgen::{GestureScript, ScatterProcessConfig};
use serde::{Deserialize, Serialize};

/// Every field has a default, so an empty file is a complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub rf: RfConfig,
    pub tracker: TrackerConfig,
    pub velocity: VelocityConfig,
    pub scatter: ScatterProcessConfig,
    pub preprocess: PreprocessConfig,
    pub poisson: PoissonTrainConfig,
    pub cvae: CvaeTrainConfig,
    pub stft: StftConfig,
    pub evaluate: EvaluateConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            rf: RfConfig::default(),
            tracker: TrackerConfig::default(),
            velocity: VelocityConfig::default(),
            scatter: ScatterProcessConfig::default(),
            preprocess: PreprocessConfig::default(),
            poisson: PoissonTrainConfig::default(),
            cvae: CvaeTrainConfig::default(),
            stft: StftConfig::default(),
            evaluate: EvaluateConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Keypoints are resampled onto this channel snapshot spacing, s.
    pub snapshot_interval: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { snapshot_interval: 0.0026 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Snapshots per count-histogram window.
    pub count_window: usize,
    /// Poisson draws per window.
    pub count_draws: usize,
    /// Snapshots per block when matching generated to reference points.
    pub match_window: usize,
    /// Delay-spread error regarded as a match, ns.
    pub rmsds_tolerance_ns: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            count_window: 10,
            count_draws: 100,
            match_window: 10,
            rmsds_tolerance_ns: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// One sequence is synthesized per script.
    pub scripts: Vec<GestureScript>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { scripts: vec![GestureScript::default()] }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.rf.validate()?;
        self.tracker.validate()?;
        self.scatter.validate()?;
        self.poisson.validate()?;
        self.cvae.validate()?;
        for s in &self.synth.scripts {
            s.validate()?;
        }
        if !(self.preprocess.snapshot_interval > 0.0) {
            bail!("config: snapshot_interval must be positive");
        }
        let e = &self.evaluate;
        if e.count_window == 0 || e.count_draws == 0 || e.match_window == 0 || !(e.rmsds_tolerance_ns > 0.0) {
            bail!("config: evaluation windows, draws and tolerance must be positive");
        }
        if self.stft.window_len == 0 || self.stft.hop == 0 {
            bail!("config: STFT window and hop must be positive");
        }
        Ok(())
    }

    /// Seed for one pipeline stage, derived from the global seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed ^ (stage as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth = 1,
    Poisson = 2,
    Cvae = 3,
    Generate = 4,
    Simulate = 5,
    Evaluate = 6,
}
