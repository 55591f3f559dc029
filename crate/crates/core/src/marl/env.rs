//! Environments the trainer can drive.

use std::sync::Arc;

use crate::engine::{observe, observation_len, scripted_opponent, ActionCommand, ReplayRecord, ScenarioSpec, WorldState};
use crate::error::{Error, Result};
use crate::influence::{aggregate_maim, encode_maim, maim_normalizer, AimParams};
use crate::neural::Tensor;

/// Result of one joint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub terminal: bool,
    pub victory: bool,
}

/// A cooperative multi-agent episode with a shared reward and a shared
/// spatial input. Agents are addressed by index in `0..n_agents()`.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_agents(&self) -> usize;
    /// `(height, width)` of the shared spatial input.
    fn maim_shape(&self) -> (usize, usize);
    fn reset(&mut self) -> Result<()>;
    fn is_terminal(&self) -> bool;
    fn living_agents(&self) -> Vec<usize>;
    fn observe(&self, agent: usize) -> Result<Vec<f32>>;
    fn legal_actions(&self, agent: usize) -> Result<Vec<bool>>;
    fn maim(&self) -> Tensor<f32>;
    /// `actions` holds one `(agent, action index)` pair per living agent.
    fn step(&mut self, actions: &[(usize, usize)]) -> Result<EnvStep>;
}

/// The combat simulator against the scripted opponent.
#[derive(Debug, Clone)]
pub struct CombatEnv {
    spec: Arc<ScenarioSpec>,
    seed: u64,
    aim: AimParams,
    normalizer: f64,
    world: WorldState,
    replay: Option<Vec<ReplayRecord>>,
}

impl CombatEnv {
    pub fn new(spec: &ScenarioSpec, aim: AimParams, seed: u64) -> Result<Self> {
        spec.validate()?;
        aim.validate()?;
        Ok(Self {
            world: WorldState::load(spec, seed)?,
            spec: Arc::new(spec.clone()),
            seed,
            aim,
            normalizer: maim_normalizer(spec),
            replay: None,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Starts recording one replay record per step; cleared on reset.
    pub fn record_replay(&mut self, enabled: bool) {
        self.replay = enabled.then(Vec::new);
    }

    pub fn take_replay(&mut self) -> Vec<ReplayRecord> {
        self.replay.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

impl Environment for CombatEnv {
    fn observation_dim(&self) -> usize {
        observation_len(self.spec.observation_slots)
    }

    fn n_actions(&self) -> usize {
        self.world.n_actions()
    }

    fn n_agents(&self) -> usize {
        self.spec.n_controlled()
    }

    fn maim_shape(&self) -> (usize, usize) {
        (self.aim.grid_height, self.aim.grid_width)
    }

    fn reset(&mut self) -> Result<()> {
        self.world = WorldState::load(&self.spec, self.seed)?;
        if let Some(r) = &mut self.replay {
            r.clear();
        }
        Ok(())
    }

    fn is_terminal(&self) -> bool {
        self.world.is_terminal()
    }

    fn living_agents(&self) -> Vec<usize> {
        self.world.living_agents().collect()
    }

    fn observe(&self, agent: usize) -> Result<Vec<f32>> {
        Ok(observe(&self.world, agent)?.into_iter().map(|v| v as f32).collect())
    }

    fn legal_actions(&self, agent: usize) -> Result<Vec<bool>> {
        self.world.legal_actions(agent)
    }

    fn maim(&self) -> Tensor<f32> {
        encode_maim(&aggregate_maim(&self.world, &self.aim), self.normalizer)
    }

    fn step(&mut self, actions: &[(usize, usize)]) -> Result<EnvStep> {
        let mut joint = vec![ActionCommand::NoOp; self.n_agents()];
        for &(agent, action) in actions {
            let slot = joint.get_mut(agent).ok_or(Error::Lookup { kind: "agent", id: agent })?;
            *slot = ActionCommand::from_index(action);
        }
        let theirs = scripted_opponent(&self.world);
        let (next, outcome) = self.world.step_with_enemy_actions(&joint, &theirs)?;
        if let Some(r) = &mut self.replay {
            r.push(ReplayRecord::new(&self.world, &joint, &theirs, outcome.shared_reward));
        }
        self.world = next;
        Ok(EnvStep {
            reward: outcome.shared_reward,
            terminal: outcome.terminal,
            victory: outcome.victory,
        })
    }
}

/// Two-armed bandit: one agent, one step, reward 1 for `better_arm` and 0
/// otherwise. Used to sanity-check the policy-gradient direction.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub better_arm: usize,
    done: bool,
}

impl BanditEnv {
    pub const MAIM_SIDE: usize = 8;

    pub fn new(better_arm: usize) -> Self {
        assert!(better_arm < 2, "a two-armed bandit has arms 0 and 1");
        Self { better_arm, done: false }
    }
}

impl Environment for BanditEnv {
    fn observation_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn n_agents(&self) -> usize {
        1
    }

    fn maim_shape(&self) -> (usize, usize) {
        (Self::MAIM_SIDE, Self::MAIM_SIDE)
    }

    fn reset(&mut self) -> Result<()> {
        self.done = false;
        Ok(())
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn living_agents(&self) -> Vec<usize> {
        if self.done {
            Vec::new()
        } else {
            vec![0]
        }
    }

    fn observe(&self, _agent: usize) -> Result<Vec<f32>> {
        Ok(vec![1.0])
    }

    fn legal_actions(&self, _agent: usize) -> Result<Vec<bool>> {
        Ok(vec![true, true])
    }

    fn maim(&self) -> Tensor<f32> {
        Tensor::zeros(vec![1, Self::MAIM_SIDE, Self::MAIM_SIDE])
    }

    fn step(&mut self, actions: &[(usize, usize)]) -> Result<EnvStep> {
        if self.done {
            return Err(Error::Contract("step called on a finished bandit episode".into()));
        }
        let &[(0, arm)] = actions else {
            return Err(Error::Validation(format!("bandit expects one action for agent 0, got {actions:?}")));
        };
        if arm > 1 {
            return Err(Error::IllegalAction {
                agent: 0,
                action: arm.to_string(),
            });
        }
        self.done = true;
        let win = arm == self.better_arm;
        Ok(EnvStep {
            reward: if win { 1.0 } else { 0.0 },
            terminal: true,
            victory: win,
        })
    }
}
