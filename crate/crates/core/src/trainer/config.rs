use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::Architecture;
use crate::observation::{RenderParams, CHANNELS};
use crate::sim::WorldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    /// The full-size 48×48 network.
    Parity,
    /// Same layer pattern, narrower and with smaller kernels.
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Parity,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(Profile::Parity),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Usage(format!("unknown profile `{other}` (expected parity or desk)"))),
        }
    }
}

/// Every knob of a training run. Serialized as a flat TOML key-value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Total world steps N.
    pub total_steps: u64,
    /// Episode step cap M.
    pub max_episode_steps: u64,
    /// Evaluation period E.
    pub eval_period: u64,
    /// Target sync period δ.
    pub target_period: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    /// Reward weight k.
    pub reward_k: f64,
    /// Stacked frames n.
    pub frame_stack: usize,
    /// Speed command of each action, m/s.
    pub action_speeds: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
    pub resolution: usize,
    pub view_extent: f64,
    pub network: NetworkKind,
    /// Conv widths of the compact network.
    pub compact_filters: [usize; 3],
    pub compact_hidden: usize,
    /// World steps between optimizer updates.
    pub update_period: u64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_period: u64,
    /// Shift c of the scenario weights 1/(G − min G + c).
    pub priority_shift: f64,
    /// Probability floor of every scenario.
    pub priority_floor: f64,
}

impl TrainConfig {
    /// Full-scale hyperparameters.
    pub fn parity() -> Self {
        Self {
            total_steps: 1_000_000,
            max_episode_steps: 1_000,
            eval_period: 5_000,
            target_period: 1_000,
            gamma: 0.99,
            learning_rate: 1e-4,
            batch_size: 256,
            buffer_capacity: 150_000,
            epsilon_start: 1.0,
            epsilon_decay: 1e-6,
            reward_k: 1.0,
            frame_stack: 3,
            action_speeds: vec![0.0, 15.0],
            dt: 0.1,
            seed: 0,
            resolution: 48,
            view_extent: 50.0,
            network: NetworkKind::Parity,
            compact_filters: [16, 32, 32],
            compact_hidden: 128,
            update_period: 1,
            grad_clip: 0.0,
            checkpoint_period: 100_000,
            priority_shift: 1.0,
            priority_floor: 0.2 / 81.0,
        }
    }

    /// CPU-tractable reproduction: 24×24 frames, compact network, 1.5e5 steps.
    pub fn desk() -> Self {
        Self {
            total_steps: 150_000,
            eval_period: 2_500,
            buffer_capacity: 30_000,
            batch_size: 32,
            epsilon_decay: 1e-5,
            resolution: 24,
            network: NetworkKind::Compact,
            update_period: 4,
            checkpoint_period: 0,
            ..Self::parity()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Parity => Self::parity(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn actions(&self) -> usize {
        self.action_speeds.len()
    }

    pub fn render_params(&self) -> RenderParams {
        RenderParams { resolution: self.resolution, view_extent: self.view_extent }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig { dt: self.dt, ..WorldConfig::default() }
    }

    pub fn architecture(&self) -> Architecture {
        let channels = CHANNELS * self.frame_stack;
        match self.network {
            NetworkKind::Parity => Architecture { input_channels: channels, actions: self.actions(), ..Architecture::parity() },
            NetworkKind::Compact => {
                Architecture::compact(channels, self.resolution, self.compact_filters, self.compact_hidden, self.actions())
            }
        }
    }

    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_episode_steps == 0 || self.eval_period == 0 || self.target_period == 0 || self.update_period == 0 {
            return bad("max_episode_steps, eval_period, target_period and update_period must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and not exceed buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(self.epsilon_decay >= 0.0) {
            return bad("epsilon_start must lie in [0, 1] and epsilon_decay must be >= 0");
        }
        if !(self.reward_k > 0.0) || self.frame_stack == 0 {
            return bad("reward_k and frame_stack must be positive");
        }
        if self.action_speeds.len() < 2 || self.action_speeds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("action_speeds needs at least two finite non-negative speeds");
        }
        if !(self.dt > 0.0) || !(self.view_extent > 0.0) || self.resolution == 0 {
            return bad("dt, view_extent and resolution must be positive");
        }
        if self.network == NetworkKind::Parity && self.resolution != 48 {
            return bad("the parity network expects 48x48 frames");
        }
        if !(self.grad_clip >= 0.0) || !(self.priority_shift > 0.0) {
            return bad("grad_clip must be >= 0 and priority_shift > 0");
        }
        if !(self.priority_floor >= 0.0 && self.priority_floor * 81.0 <= 1.0) {
            return bad("priority_floor must lie in [0, 1/81]");
        }
        self.architecture().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Profile defaults overridden by the keys present in `text`.
    pub fn from_toml_over(base: &Self, text: &str) -> Result<Self> {
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            if !merged.contains_key(&k) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_over(base, &text)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
