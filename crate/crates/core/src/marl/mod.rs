//! Semi-centralized advantage actor-critic.
//!
//! One actor and one critic parameter set are shared by every controlled
//! agent. Each agent acts from its own local observation plus the MAIM of
//! the current step. Parameters are updated only at the end of an episode,
//! from Monte-Carlo returns, with the critic's value as a constant baseline.

mod a2c;
mod config;
mod env;
mod trainer;

pub use crate::neural::Architecture;
pub use a2c::{
    actor_update, advantages, compute_returns, critic_update, run_episode, select_action, EpisodeBuffer, Transition,
};
pub use config::{epsilon_value, EpsilonSchedule, TrainerConfig};
pub use env::{BanditEnv, CombatEnv, EnvStep, Environment};
pub use trainer::{train, train_env, train_env_with, TrainOutput, Trainer};

use crate::neural::OptimizerKind;

/// Settings of the two-armed bandit sanity check: a small dense-only
/// network on the constant observation, 500 episodes, ε decaying over the
/// first half.
pub fn bandit_config(seed: u64) -> TrainerConfig {
    TrainerConfig {
        episodes: 500,
        seed,
        architecture: Architecture::DenseOnly,
        maim_grid: BanditEnv::MAIM_SIDE,
        maim_feature_dim: 8,
        dense_width: 32,
        actor_lr: 0.003,
        critic_lr: 0.003,
        optimizer: OptimizerKind::Sgd,
        epsilon: EpsilonSchedule {
            epsilon_0: 1.0,
            epsilon_min: 0.05,
            decay_episodes: 250,
        },
        ..TrainerConfig::default()
    }
}
