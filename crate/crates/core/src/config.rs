//! Run configuration: TOML `key = value` files mirroring the trainer's
//! fields, with two network/optimizer profiles.

use crate::discriminator::GateThresholds;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Gated reset phase + forward phase + self-supervised discriminator.
    Ours,
    /// Manual reset to one designated far-from-goal state every episode.
    ResetRl,
    /// Manual reset to a uniform valid state every episode.
    OracleRl,
    /// Novelty-driven reset phase with no gate (ablation).
    R3l,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "ours" => Some(Algorithm::Ours),
            "reset-rl" => Some(Algorithm::ResetRl),
            "oracle-rl" => Some(Algorithm::OracleRl),
            "r3l" => Some(Algorithm::R3l),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ours => "ours",
            Algorithm::ResetRl => "reset-rl",
            Algorithm::OracleRl => "oracle-rl",
            Algorithm::R3l => "r3l",
        }
    }

    pub fn has_reset_phase(&self) -> bool {
        matches!(self, Algorithm::Ours | Algorithm::R3l)
    }

    pub fn uses_gate(&self) -> bool {
        matches!(self, Algorithm::Ours)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 512-unit nets, batch 256.
    Paper,
    /// 64-unit nets, batch 64; same code path at desk scale.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManualResetDestination {
    /// Teleport to a uniform valid state (matches the evaluation distribution).
    UniformValid,
    /// Teleport to the designated farthest-from-goal cell center.
    FarState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub maze: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub total_env_steps: u64,
    /// Episode caps; `None` takes the maze file's values.
    pub t_forward: Option<usize>,
    pub t_reset: Option<usize>,
    pub gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub target_update_interval: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub profile: Profile,
    /// `None` takes the profile default.
    pub batch_size: Option<usize>,
    pub hidden_size: Option<usize>,
    pub buffer_capacity: usize,
    pub lr_reset: f64,
    pub lr_others: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub gate_warmup_episodes: u64,
    pub rnd_reward_normalization: bool,
    pub rnd_embedding_dim: usize,
    pub manual_reset_destination: ManualResetDestination,
    /// States per curriculum snapshot at each eval point; 0 disables export.
    pub curriculum_snapshot_states: usize,
    /// Also serialize replay buffers into the final checkpoint.
    pub checkpoint_buffers: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            maze: "1way".to_string(),
            algorithm: Algorithm::Ours,
            seed: 0,
            total_env_steps: 100_000,
            t_forward: None,
            t_reset: None,
            gamma: 0.99,
            alpha: 0.4,
            tau: 0.005,
            target_update_interval: 1,
            lambda1: 0.3,
            lambda2: 0.7,
            profile: Profile::Paper,
            batch_size: None,
            hidden_size: None,
            buffer_capacity: 5_000_000,
            lr_reset: 3e-5,
            lr_others: 1e-4,
            eval_interval: 10_000,
            eval_episodes: 100,
            gate_warmup_episodes: 0,
            rnd_reward_normalization: true,
            rnd_embedding_dim: 64,
            manual_reset_destination: ManualResetDestination::UniformValid,
            curriculum_snapshot_states: 512,
            checkpoint_buffers: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.total_env_steps == 0 {
            return bad("total_env_steps must be positive".into());
        }
        if let Some(t) = self.t_forward {
            if t == 0 {
                return bad("t_forward must be positive".into());
            }
        }
        if let Some(t) = self.t_reset {
            if t == 0 {
                return bad("t_reset must be positive".into());
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.alpha < 0.0 {
            return bad("alpha must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must be in [0, 1]".into());
        }
        if self.target_update_interval == 0 {
            return bad("target_update_interval must be positive".into());
        }
        GateThresholds::new(self.lambda1, self.lambda2).map_err(ConfigError::Invalid)?;
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive".into());
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                return bad("batch_size must be positive".into());
            }
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval cadence fields must be positive".into());
        }
        if !(self.lr_reset > 0.0 && self.lr_others > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.rnd_embedding_dim == 0 && self.algorithm.has_reset_phase() {
            return bad("rnd_embedding_dim must be positive for reset-phase algorithms".into());
        }
        Ok(())
    }

    pub fn thresholds(&self) -> GateThresholds {
        GateThresholds {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        let h = self.hidden_size.unwrap_or(match self.profile {
            Profile::Paper => 512,
            Profile::Test => 64,
        });
        vec![h, h]
    }

    pub fn rnd_hidden(&self) -> Vec<usize> {
        match self.profile {
            Profile::Paper => vec![256, 256],
            Profile::Test => vec![64, 64],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch_size.unwrap_or(match self.profile {
            Profile::Paper => 256,
            Profile::Test => 64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_round_trip() {
        let cfg = RunConfig::from_toml(
            "maze = \"2way\"\nalgorithm = \"r3l\"\nseed = 7\nprofile = \"test\"\n",
        )
        .unwrap();
        assert_eq!(cfg.maze, "2way");
        assert_eq!(cfg.algorithm, Algorithm::R3l);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.batch(), 64);
        assert_eq!(cfg.hidden(), vec![64, 64]);
    }

    #[test]
    fn defaults_match_reported_constants() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.alpha, 0.4);
        assert_eq!(cfg.tau, 0.005);
        assert_eq!(cfg.lambda1, 0.3);
        assert_eq!(cfg.lambda2, 0.7);
        assert_eq!(cfg.buffer_capacity, 5_000_000);
        assert_eq!(cfg.lr_reset, 3e-5);
        assert_eq!(cfg.lr_others, 1e-4);
        assert_eq!(cfg.batch(), 256);
        assert_eq!(cfg.hidden(), vec![512, 512]);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_thresholds_fail_validation() {
        let err = RunConfig::from_toml("lambda1 = 0.9\nlambda2 = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("no_such_field = 3\n").is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Ours, Algorithm::ResetRl, Algorithm::OracleRl, Algorithm::R3l] {
            assert_eq!(Algorithm::parse(a.as_str()), Some(a));
        }
        assert_eq!(Algorithm::parse("nope"), None);
    }
}
