//! The episode loop.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::ScenarioSpec;
use crate::error::{Error, Result};
use crate::harness::MetricsRecord;
use crate::neural::{save_checkpoint, Head, Network, NetworkSpec, Optimizer, Parameters, UpdateDirection};

use super::a2c::{actor_update, advantages, compute_returns, critic_update, run_episode, EpisodeBuffer};
use super::config::TrainerConfig;
use super::env::{CombatEnv, Environment};

/// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A trained actor/critic pair and the per-episode metrics.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor_spec: NetworkSpec,
    pub critic_spec: NetworkSpec,
    pub actor: Parameters<f32>,
    pub critic: Parameters<f32>,
    pub metrics: Vec<MetricsRecord>,
    /// Checkpoint writes that failed; training carried on without them.
    pub checkpoint_failures: Vec<String>,
}

/// Shared-parameter actor-critic trainer over any [`Environment`].
pub struct Trainer {
    config: TrainerConfig,
    actor_net: Network,
    critic_net: Network,
    actor: Parameters<f32>,
    critic: Parameters<f32>,
    actor_opt: Optimizer<f32>,
    critic_opt: Optimizer<f32>,
    action_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    episode: u32,
    reward_window: std::collections::VecDeque<f64>,
}

impl Trainer {
    pub fn new(env: &dyn Environment, config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        let (h, w) = env.maim_shape();
        let mut actor_spec = config.network_spec(env.observation_dim(), Head::Policy { actions: env.n_actions() });
        actor_spec.maim_height = h;
        actor_spec.maim_width = w;
        let critic_spec = NetworkSpec { head: Head::Value, ..actor_spec };
        let actor_net = Network::new(actor_spec)?;
        let critic_net = Network::new(critic_spec)?;
        let mut init = stream(config.seed, STREAM_INIT);
        let actor = actor_net.init_params(&mut init);
        let critic = critic_net.init_params(&mut init);
        let actor_opt = Optimizer::new(config.optimizer, config.actor_lr, UpdateDirection::Ascend, actor.len());
        let critic_opt = Optimizer::new(config.optimizer, config.critic_lr, UpdateDirection::Descend, critic.len());
        Ok(Self {
            config: config.clone(),
            actor_net,
            critic_net,
            actor,
            critic,
            actor_opt,
            critic_opt,
            action_rng: stream(config.seed, STREAM_ACTIONS),
            dropout_rng: stream(config.seed, STREAM_DROPOUT),
            episode: 0,
            reward_window: Default::default(),
        })
    }

    pub fn actor_network(&self) -> &Network {
        &self.actor_net
    }

    pub fn critic_network(&self) -> &Network {
        &self.critic_net
    }

    pub fn actor(&self) -> &Parameters<f32> {
        &self.actor
    }

    pub fn critic(&self) -> &Parameters<f32> {
        &self.critic
    }

    pub fn episodes_done(&self) -> u32 {
        self.episode
    }

    /// Plays one episode, then updates actor and critic at its terminal state.
    pub fn train_episode(&mut self, env: &mut dyn Environment) -> Result<(EpisodeBuffer, MetricsRecord)> {
        let epsilon = self.config.epsilon.value(self.episode);
        let buffer = run_episode(
            env,
            &self.actor_net,
            &self.actor,
            epsilon,
            self.config.audit_snapshots,
            &mut self.action_rng,
        )?;
        let returns = compute_returns(&buffer.rewards, self.config.gamma);
        let adv = advantages(
            &self.critic_net,
            &self.critic,
            &buffer,
            &returns,
            self.config.normalize_advantages,
            &mut self.dropout_rng,
        )?;
        self.actor = actor_update(
            &self.actor_net,
            &self.actor,
            &buffer,
            &adv,
            &mut self.actor_opt,
            &mut self.dropout_rng,
        )?;
        self.critic = critic_update(
            &self.critic_net,
            &self.critic,
            &buffer,
            &returns,
            &mut self.critic_opt,
            &mut self.dropout_rng,
        )?;
        if !(self.actor.is_finite() && self.critic.is_finite()) {
            return Err(Error::Diverged(format!("non-finite parameters after episode {}", self.episode)));
        }

        self.reward_window.push_back(buffer.episode_return);
        if self.reward_window.len() > self.config.running_window {
            self.reward_window.pop_front();
        }
        // Summed afresh each time so the column is exactly recomputable from the rewards.
        let running_avg = self.reward_window.iter().sum::<f64>() / self.reward_window.len() as f64;
        let record = MetricsRecord {
            seed: self.config.seed,
            episode: self.episode,
            reward: buffer.episode_return,
            win: buffer.victory,
            epsilon,
            running_avg,
            length: buffer.length() as u32,
        };
        self.episode += 1;
        Ok((buffer, record))
    }

    /// Writes `actor_ep{N}.ckpt` and `critic_ep{N}.ckpt` into `dir`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let actor_path = dir.join(format!("actor_ep{}.ckpt", self.episode));
        let critic_path = dir.join(format!("critic_ep{}.ckpt", self.episode));
        save_checkpoint(&actor_path, self.actor_net.spec(), &self.actor)?;
        save_checkpoint(&critic_path, self.critic_net.spec(), &self.critic)?;
        Ok((actor_path, critic_path))
    }

    pub fn into_output(self, metrics: Vec<MetricsRecord>, checkpoint_failures: Vec<String>) -> TrainOutput {
        TrainOutput {
            actor_spec: *self.actor_net.spec(),
            critic_spec: *self.critic_net.spec(),
            actor: self.actor,
            critic: self.critic,
            metrics,
            checkpoint_failures,
        }
    }
}

/// Trains for `config.episodes` episodes on `env`, checkpointing into
/// `checkpoint_dir` every `config.checkpoint_every` episodes when both are set.
pub fn train_env<E: Environment>(
    env: &mut E,
    config: &TrainerConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    train_env_with(env, config, checkpoint_dir, |_, _| {})
}

/// [`train_env`] that calls `before_episode(env, episode)` ahead of every
/// episode, e.g. to switch on replay recording for the last one.
pub fn train_env_with<E: Environment>(
    env: &mut E,
    config: &TrainerConfig,
    checkpoint_dir: Option<&Path>,
    mut before_episode: impl FnMut(&mut E, u32),
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(env, config)?;
    let mut metrics = Vec::with_capacity(config.episodes as usize);
    let mut failures = Vec::new();
    for episode in 0..config.episodes {
        before_episode(env, episode);
        let (_, record) = trainer.train_episode(env)?;
        log::debug!(
            "seed {} episode {} reward {:.3} win {} eps {:.3}",
            record.seed,
            record.episode,
            record.reward,
            record.win,
            record.epsilon
        );
        metrics.push(record);
        if let (Some(dir), n) = (checkpoint_dir, config.checkpoint_every) {
            if n > 0 && trainer.episodes_done() % n == 0 {
                if let Err(e) = trainer.save_checkpoints(dir) {
                    log::warn!("checkpoint after episode {} failed: {e}", trainer.episodes_done());
                    failures.push(e.to_string());
                }
            }
        }
    }
    Ok(trainer.into_output(metrics, failures))
}

/// Trains on a combat scenario. The scenario and config fully determine
/// the result.
pub fn train(scenario: &ScenarioSpec, config: &TrainerConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    let mut env = CombatEnv::new(scenario, config.aim_params(), config.seed)?;
    train_env(&mut env, config, checkpoint_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::env::BanditEnv;
    use crate::neural::{Architecture, Batch, Mode, Model, Tensor};

    fn tiny_config(episodes: u32) -> TrainerConfig {
        TrainerConfig {
            episodes,
            maim_grid: 16,
            conv_filters: 4,
            maim_feature_dim: 8,
            dense_width: 16,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn zero_episodes_returns_initialization() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = tiny_config(0);
        let out = train(&spec, &cfg, None).unwrap();
        assert!(out.metrics.is_empty());
        let env = CombatEnv::new(&spec, cfg.aim_params(), cfg.seed).unwrap();
        let fresh = Trainer::new(&env, &cfg).unwrap();
        assert_eq!(out.actor.values, fresh.actor().values);
        assert_eq!(out.critic.values, fresh.critic().values);
    }

    #[test]
    fn dense_only_allocates_no_conv_parameters() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = TrainerConfig { architecture: Architecture::DenseOnly, ..tiny_config(1) };
        let out = train(&spec, &cfg, None).unwrap();
        for layout in [&out.actor.layout, &out.critic.layout] {
            assert!(layout.blocks.iter().all(|b| !b.name.contains("conv")));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = tiny_config(3);
        let a = train(&spec, &cfg, None).unwrap();
        let b = train(&spec, &cfg, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.actor.values, b.actor.values);
        let other = train(&spec, &TrainerConfig { seed: 1, ..cfg }, None).unwrap();
        assert_ne!(a.actor.values, other.actor.values);
    }

    /// Replays a 2-episode run by hand from the same streams and compares rows.
    #[test]
    fn metrics_match_scripted_reexecution() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = tiny_config(2);
        let out = train(&spec, &cfg, None).unwrap();

        let mut env = CombatEnv::new(&spec, cfg.aim_params(), cfg.seed).unwrap();
        let trainer = Trainer::new(&env, &cfg).unwrap();
        let mut actor = trainer.actor().clone();
        let mut critic = trainer.critic().clone();
        let mut actions = stream(cfg.seed, STREAM_ACTIONS);
        let mut dropout = stream(cfg.seed, STREAM_DROPOUT);
        let mut a_opt = Optimizer::new(cfg.optimizer, cfg.actor_lr, UpdateDirection::Ascend, actor.len());
        let mut c_opt = Optimizer::new(cfg.optimizer, cfg.critic_lr, UpdateDirection::Descend, critic.len());
        let mut rewards = Vec::new();
        for (ep, row) in out.metrics.iter().enumerate() {
            let eps = cfg.epsilon.value(ep as u32);
            let buf = run_episode(&mut env, trainer.actor_network(), &actor, eps, false, &mut actions).unwrap();
            let g = compute_returns(&buf.rewards, cfg.gamma);
            let adv = advantages(trainer.critic_network(), &critic, &buf, &g, false, &mut dropout).unwrap();
            actor = actor_update(trainer.actor_network(), &actor, &buf, &adv, &mut a_opt, &mut dropout).unwrap();
            critic = critic_update(trainer.critic_network(), &critic, &buf, &g, &mut c_opt, &mut dropout).unwrap();
            rewards.push(buf.episode_return);
            assert_eq!(row.episode, ep as u32);
            assert_eq!(row.reward, buf.episode_return);
            assert_eq!(row.win, buf.victory);
            assert_eq!(row.length as usize, buf.length());
            assert_eq!(row.epsilon, eps);
            assert_eq!(row.running_avg, rewards.iter().sum::<f64>() / rewards.len() as f64);
        }
        assert_eq!(actor.values, out.actor.values);
    }

    #[test]
    fn parameters_only_change_between_episodes() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = TrainerConfig { audit_snapshots: true, ..tiny_config(2) };
        let mut env = CombatEnv::new(&spec, cfg.aim_params(), cfg.seed).unwrap();
        let mut trainer = Trainer::new(&env, &cfg).unwrap();
        let before = trainer.actor().fingerprint();
        let (buf, _) = trainer.train_episode(&mut env).unwrap();
        assert!(!buf.policy_fingerprints.is_empty());
        assert!(buf.policy_fingerprints.iter().all(|&f| f == before));
        assert_ne!(trainer.actor().fingerprint(), before);
    }

    #[test]
    fn checkpoints_are_written_on_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = TrainerConfig { checkpoint_every: 2, ..tiny_config(4) };
        let out = train(&spec, &cfg, Some(dir.path())).unwrap();
        assert!(out.checkpoint_failures.is_empty());
        for ep in [2, 4] {
            let (s, p) = crate::neural::load_checkpoint(&dir.path().join(format!("actor_ep{ep}.ckpt"))).unwrap();
            assert_eq!(s, out.actor_spec);
            if ep == 4 {
                assert_eq!(p.values, out.actor.values);
            }
        }
        assert!(!dir.path().join("actor_ep1.ckpt").exists());
    }

    #[test]
    fn checkpoint_failure_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let cfg = TrainerConfig { checkpoint_every: 1, ..tiny_config(2) };
        let out = train(&spec, &cfg, Some(&blocker)).unwrap();
        assert_eq!(out.metrics.len(), 2);
        assert_eq!(out.checkpoint_failures.len(), 2);
    }

    #[test]
    fn bandit_learns_the_better_arm() {
        let mut env = BanditEnv::new(1);
        let cfg = super::super::bandit_config(11);
        let out = train_env(&mut env, &cfg, None).unwrap();
        let net = Network::new(out.actor_spec).unwrap();
        let maims = [Tensor::zeros(vec![1, 8, 8])];
        let batch = Batch { observations: &[1.0], maims: &maims, row_maim: &[0] };
        let (logits, _) = Model::<f32>::forward(&net, &out.actor, &batch, Mode::Eval, &mut stream(0, 9)).unwrap();
        let p = crate::neural::layers::masked_softmax(&logits, &[true, true]).unwrap();
        assert!(p[1] >= 0.95, "p = {p:?}");
    }
}
