use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{AimParams, Falloff};
use crate::neural::{Architecture, ConvSharing, Head, NetworkSpec, OptimizerKind};

/// Linear ε decay from `epsilon_0` to `epsilon_min` over `decay_episodes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub epsilon_0: f64,
    pub epsilon_min: f64,
    pub decay_episodes: u32,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            epsilon_0: 1.0,
            epsilon_min: 0.05,
            decay_episodes: 1200,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon_0 && self.epsilon_0 <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon schedule needs 0 <= epsilon_min ({}) <= epsilon_0 ({}) <= 1",
                self.epsilon_min, self.epsilon_0
            )));
        }
        Ok(())
    }

    /// ε for a 0-based episode index.
    pub fn value(&self, episode: u32) -> f64 {
        if episode >= self.decay_episodes {
            return self.epsilon_min;
        }
        let t = episode as f64 / self.decay_episodes as f64;
        self.epsilon_0 + (self.epsilon_min - self.epsilon_0) * t
    }
}

pub fn epsilon_value(episode: u32, schedule: &EpsilonSchedule) -> f64 {
    schedule.value(episode)
}

/// Everything that determines a training run besides the scenario.
///
/// Learning rates, discount, optimizer and the ε schedule are engineering
/// defaults; the network shape and dropout follow the reference architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub episodes: u32,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epsilon: EpsilonSchedule,
    pub dropout_rate: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub conv_sharing: ConvSharing,
    pub optimizer: OptimizerKind,
    /// Standardize advantages within each episode before the actor step.
    pub normalize_advantages: bool,
    /// Side of the square influence grid.
    pub maim_grid: usize,
    /// Influence footprint radius in grid cells; `None` means grid / 8.
    pub influence_radius: Option<f64>,
    pub falloff: Falloff,
    pub conv_filters: usize,
    pub maim_feature_dim: usize,
    pub dense_width: usize,
    /// Window of the running-average reward column.
    pub running_window: usize,
    /// Save actor and critic every this many episodes; 0 disables checkpoints.
    pub checkpoint_every: u32,
    /// Record the actor fingerprint at every step (diagnostic, slow).
    pub audit_snapshots: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes: 1600,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 5e-4,
            epsilon: EpsilonSchedule::default(),
            dropout_rate: 0.1,
            seed: 0,
            architecture: Architecture::DenseCnn,
            conv_sharing: ConvSharing::Shared,
            optimizer: OptimizerKind::Sgd,
            normalize_advantages: false,
            maim_grid: 64,
            influence_radius: None,
            falloff: Falloff::Linear,
            conv_filters: 32,
            maim_feature_dim: 64,
            dense_width: 256,
            running_window: 100,
            checkpoint_every: 0,
            audit_snapshots: false,
        }
    }
}

impl TrainerConfig {
    /// Parses and validates a TOML document; omitted keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.running_window == 0 {
            return fail("running_window must be at least 1".into());
        }
        self.epsilon.validate()?;
        self.aim_params().validate()?;
        self.network_spec(1, Head::Value).validate()
    }

    pub fn aim_params(&self) -> AimParams {
        let mut params = AimParams::with_grid(self.maim_grid, self.maim_grid);
        params.falloff = self.falloff;
        if let Some(r) = self.influence_radius {
            params.radius = r;
        }
        params
    }

    pub fn network_spec(&self, observation_dim: usize, head: Head) -> NetworkSpec {
        let mut spec = NetworkSpec::new(observation_dim, self.maim_grid, self.maim_grid, head);
        spec.architecture = self.architecture;
        spec.conv_sharing = self.conv_sharing;
        spec.conv_filters = self.conv_filters;
        spec.maim_feature_dim = self.maim_feature_dim;
        spec.dense_width = self.dense_width;
        spec.dropout_rate = self.dropout_rate;
        spec
    }
}
