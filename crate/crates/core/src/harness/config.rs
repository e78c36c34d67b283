use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, LinkBudget};
use crate::error::{Error, Result};
use crate::protocols::{NoiseModel, Scheme};

/// Noise applied to training observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingNoise {
    Noiseless,
    Link,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    /// Beam index for a single-beam pattern.
    pub beam: usize,
    /// Number of coded beams; 0 plots the single beam.
    pub coded_beams: usize,
    /// Coded field to plot.
    pub field: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantization_bits: Option<u32>,
    pub uniform: bool,
    pub step_deg: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { beam: 8, coded_beams: 0, field: 0, quantization_bits: None, uniform: false, step_deg: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schemes: Vec<Scheme>,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub beams_per_packet: Vec<usize>,
    pub quantization_bits: Vec<u32>,
    /// Adds the unquantized case to the quantization sweep.
    pub include_unquantized: bool,
    pub uniform_coded: bool,
    pub runs: usize,
    pub master_seed: u64,
    pub output: PathBuf,
    pub training_noise: TrainingNoise,
    /// Run `train` on the four-beam toy channel with this NLOS attenuation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy_attenuation: Option<f64>,
    pub channel: ChannelConfig,
    pub link: LinkBudget,
    pub pattern: PatternConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            tx_antennas: 16,
            rx_antennas: 16,
            beams_per_packet: vec![1, 2, 4, 8, 16],
            quantization_bits: vec![1, 2, 3, 4],
            include_unquantized: true,
            uniform_coded: false,
            runs: 1000,
            master_seed: 1,
            output: PathBuf::from("out"),
            training_noise: TrainingNoise::Link,
            toy_attenuation: None,
            channel: ChannelConfig::default(),
            link: LinkBudget::default(),
            pattern: PatternConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        for &k in &self.beams_per_packet {
            if k == 0 || k > self.tx_antennas || self.tx_antennas % k != 0 {
                return bad(format!("{k} beams per packet must divide the {} Tx beams", self.tx_antennas));
            }
        }
        for &b in &self.quantization_bits {
            if b == 0 || b > 24 {
                return bad(format!("quantization bits must be in 1..=24, got {b}"));
            }
        }
        if let Some(a) = self.toy_attenuation {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("toy_attenuation must lie in (0, 1), got {a}"));
            }
        }
        let p = &self.pattern;
        if p.beam >= self.tx_antennas || p.coded_beams > self.tx_antennas {
            return bad("pattern beam selection exceeds the Tx codebook".into());
        }
        if !(p.step_deg.is_finite() && p.step_deg > 0.0) {
            return bad("pattern.step_deg must be positive".into());
        }
        self.channel.validate()?;
        self.link.validate()?;
        Ok(())
    }

    pub fn noise_model(&self) -> NoiseModel {
        match self.training_noise {
            TrainingNoise::Noiseless => NoiseModel::Noiseless,
            TrainingNoise::Link => NoiseModel::Link(self.link),
        }
    }
}
