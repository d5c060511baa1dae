//! Episode-level configuration shared by the engine, the backends and the
//! prompt assembly.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Which system prompt (and output contract) the agent runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Full reasoning contract: thinking, evaluation, memory, next goal, actions.
    #[default]
    Normal,
    /// Concise contract: memory and actions only.
    Flash,
}

impl std::str::FromStr for PromptMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(PromptMode::Normal),
            "flash" => Ok(PromptMode::Flash),
            other => Err(ConfigError::Invalid(format!("unknown prompt mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            width: 1920,
            height: 1080,
        }
    }
}

/// Limits and knobs for a single episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub max_consecutive_failures: u32,
    pub max_actions_per_step: u32,
    pub prompt_mode: PromptMode,
    pub viewport: Viewport,
    pub seed: u64,
    /// Strip one surrounding markdown code fence before parsing model output.
    pub lenient_fences: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 20,
            max_consecutive_failures: 3,
            max_actions_per_step: 3,
            prompt_mode: PromptMode::Normal,
            viewport: Viewport::default(),
            seed: 0,
            lenient_fences: true,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == 0 {
            return Err(ConfigError::Invalid("max_steps must be >= 1".into()));
        }
        if self.max_consecutive_failures == 0 {
            return Err(ConfigError::Invalid(
                "max_consecutive_failures must be >= 1".into(),
            ));
        }
        if self.max_actions_per_step == 0 {
            return Err(ConfigError::Invalid(
                "max_actions_per_step must be >= 1".into(),
            ));
        }
        if self.viewport.width == 0 || self.viewport.height == 0 {
            return Err(ConfigError::Invalid("viewport must be positive".into()));
        }
        Ok(())
    }
}
