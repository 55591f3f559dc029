//! Episode collection and the advantage actor-critic updates.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::neural::layers::masked_softmax;
use crate::neural::{policy_objective, value_loss, Batch, Mode, Model, Optimizer, Parameters, Tensor};

use super::env::Environment;

/// ε-soft action choice: with probability `epsilon` a uniformly random legal
/// action, otherwise a sample from the masked softmax of `logits`.
pub fn select_action<R: Rng + ?Sized>(logits: &[f32], mask: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
    let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if legal.is_empty() {
        return Err(Error::Contract("no legal action to select".into()));
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(legal[rng.gen_range(0..legal.len())]);
    }
    let logits: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
    let probs = masked_softmax(&logits, mask)?;
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    for &i in &legal {
        acc += probs[i];
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left a sliver of mass above the last cumulative sum.
    Ok(*legal.last().expect("non-empty"))
}

/// Discounted suffix sums `G_t = Σ_{k≥t} γ^{k−t} r_k`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// One agent's decision at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub step: usize,
    pub agent_id: usize,
    pub observation: Vec<f32>,
    pub action: usize,
    pub mask: Vec<bool>,
}

/// A finished episode: transitions ordered by step, then agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBuffer {
    /// Encoded MAIM of each step, shared by that step's transitions.
    pub maims: Vec<Tensor<f32>>,
    /// Shared reward of each step.
    pub rewards: Vec<f64>,
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
    pub victory: bool,
    /// Actor fingerprint at every step, when auditing is enabled.
    pub policy_fingerprints: Vec<u64>,
}

impl EpisodeBuffer {
    pub fn length(&self) -> usize {
        self.rewards.len()
    }

    /// Flattened update batch: observation rows, the MAIM index of each row,
    /// masks, and chosen actions.
    fn rows(&self) -> (Vec<f32>, Vec<usize>, Vec<bool>, Vec<usize>) {
        let mut obs = Vec::new();
        let mut row_maim = Vec::with_capacity(self.transitions.len());
        let mut masks = Vec::new();
        let mut actions = Vec::with_capacity(self.transitions.len());
        for t in &self.transitions {
            obs.extend_from_slice(&t.observation);
            row_maim.push(t.step);
            masks.extend_from_slice(&t.mask);
            actions.push(t.action);
        }
        (obs, row_maim, masks, actions)
    }
}

/// Plays one episode with the shared actor in eval mode. Every living agent
/// is scored by the same parameter snapshot on its own observation plus the
/// step's MAIM, which is built once per step.
pub fn run_episode<E, A>(
    env: &mut E,
    actor: &A,
    actor_params: &Parameters<f32>,
    epsilon: f64,
    audit: bool,
    rng: &mut dyn RngCore,
) -> Result<EpisodeBuffer>
where
    E: Environment + ?Sized,
    A: Model<f32>,
{
    env.reset()?;
    let mut buffer = EpisodeBuffer {
        maims: Vec::new(),
        rewards: Vec::new(),
        transitions: Vec::new(),
        episode_return: 0.0,
        victory: false,
        policy_fingerprints: Vec::new(),
    };
    while !env.is_terminal() {
        let step = buffer.rewards.len();
        let agents = env.living_agents();
        let maim = env.maim();
        let mut obs = Vec::with_capacity(agents.len() * env.observation_dim());
        let mut masks = Vec::with_capacity(agents.len());
        for &a in &agents {
            obs.extend(env.observe(a)?);
            masks.push(env.legal_actions(a)?);
        }
        let maims = [maim];
        let row_maim = vec![0; agents.len()];
        let batch = Batch {
            observations: &obs,
            maims: &maims,
            row_maim: &row_maim,
        };
        let (logits, _) = actor.forward(actor_params, &batch, Mode::Eval, rng)?;
        if audit {
            buffer.policy_fingerprints.push(actor_params.fingerprint());
        }
        let width = actor.output_width();
        let dim = env.observation_dim();
        let mut joint = Vec::with_capacity(agents.len());
        for (i, (&agent, mask)) in agents.iter().zip(masks).enumerate() {
            let action = select_action(&logits[i * width..(i + 1) * width], &mask, epsilon, rng)?;
            joint.push((agent, action));
            buffer.transitions.push(Transition {
                step,
                agent_id: agent,
                observation: obs[i * dim..(i + 1) * dim].to_vec(),
                action,
                mask,
            });
        }
        let [maim] = maims;
        buffer.maims.push(maim);
        let out = env.step(&joint)?;
        buffer.rewards.push(out.reward);
        buffer.episode_return += out.reward;
        buffer.victory |= out.victory;
    }
    Ok(buffer)
}

/// Per-transition advantages `G_t − V(s_t)` under an eval-mode critic,
/// optionally standardized within the episode.
pub fn advantages<C: Model<f32>>(
    critic: &C,
    critic_params: &Parameters<f32>,
    buffer: &EpisodeBuffer,
    returns: &[f64],
    normalize: bool,
    rng: &mut dyn RngCore,
) -> Result<Vec<f32>> {
    check_returns(buffer, returns)?;
    let (obs, row_maim, _, _) = buffer.rows();
    let batch = Batch {
        observations: &obs,
        maims: &buffer.maims,
        row_maim: &row_maim,
    };
    let (values, _) = critic.forward(critic_params, &batch, Mode::Eval, rng)?;
    let mut adv: Vec<f32> = buffer
        .transitions
        .iter()
        .zip(&values)
        .map(|(t, &v)| returns[t.step] as f32 - v)
        .collect();
    if normalize && adv.len() > 1 {
        let n = adv.len() as f32;
        let mean = adv.iter().sum::<f32>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / n).sqrt();
        for a in &mut adv {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
    Ok(adv)
}

fn check_returns(buffer: &EpisodeBuffer, returns: &[f64]) -> Result<()> {
    if returns.len() != buffer.length() {
        return Err(Error::Shape(format!(
            "{} returns for an episode of {} steps",
            returns.len(),
            buffer.length()
        )));
    }
    Ok(())
}

/// One ascent step on `(1/N) Σ A_t log π(a_t|s_t)` over all transitions,
/// with advantages held constant. Returns the new actor snapshot.
pub fn actor_update<A: Model<f32>>(
    actor: &A,
    actor_params: &Parameters<f32>,
    buffer: &EpisodeBuffer,
    advantages: &[f32],
    optimizer: &mut Optimizer<f32>,
    rng: &mut dyn RngCore,
) -> Result<Parameters<f32>> {
    if buffer.transitions.is_empty() {
        return Ok(actor_params.clone());
    }
    let (obs, row_maim, masks, actions) = buffer.rows();
    let batch = Batch {
        observations: &obs,
        maims: &buffer.maims,
        row_maim: &row_maim,
    };
    let (logits, cache) = actor.forward(actor_params, &batch, Mode::Train, rng)?;
    let (_, d_logits) = policy_objective(&logits, &masks, &actions, advantages)?;
    let grads = actor.backward(actor_params, &cache, &d_logits)?;
    optimizer.step(actor_params, &grads)
}

/// One descent step on `½ Σ (V(s_t) − G_t)² / N`. Returns the new critic snapshot.
pub fn critic_update<C: Model<f32>>(
    critic: &C,
    critic_params: &Parameters<f32>,
    buffer: &EpisodeBuffer,
    returns: &[f64],
    optimizer: &mut Optimizer<f32>,
    rng: &mut dyn RngCore,
) -> Result<Parameters<f32>> {
    check_returns(buffer, returns)?;
    if buffer.transitions.is_empty() {
        return Ok(critic_params.clone());
    }
    let (obs, row_maim, _, _) = buffer.rows();
    let batch = Batch {
        observations: &obs,
        maims: &buffer.maims,
        row_maim: &row_maim,
    };
    let (values, cache) = critic.forward(critic_params, &batch, Mode::Train, rng)?;
    let targets: Vec<f32> = buffer.transitions.iter().map(|t| returns[t.step] as f32).collect();
    let (_, d_values) = value_loss(&values, &targets)?;
    let grads = critic.backward(critic_params, &cache, &d_values)?;
    optimizer.step(critic_params, &grads)
}
