//! Deterministic turn-based combat micro-simulator.
//!
//! Every step resolves simultaneously in four phases: movement, attacks,
//! deaths, cooldowns. Attack ranges are checked against the positions at the
//! start of the step, so the outcome does not depend on the order units are
//! processed in. The engine has no stochastic transitions; a [`WorldState`]
//! plus a joint action fully determines the next state.
//!
//! Action indices for a controlled agent are laid out as
//! `[NoOp, Stop, Move N, Move S, Move E, Move W, Attack 0, .., Attack k-1]`
//! where `k` is the number of enemy slots. North is `+y`, east is `+x`.

mod observe;
mod opponent;
mod replay;
mod reward;
mod scenario;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use observe::{observation_len, observe, Observation, FEATURES_PER_SLOT};
pub use opponent::{scripted_actions, scripted_opponent};
pub use replay::{ReplayAction, ReplayLog, ReplayRecord, ReplayUnit, ReplayWriter};
pub use reward::{compute_reward, reward_scale, KILL_POINTS, MAX_EPISODE_REWARD};
pub use scenario::{ScenarioSpec, UnitSpawn, DEFAULT_SIGHT_RANGE};

/// Number of non-attack actions preceding the attack slots.
pub const ATTACK_OFFSET: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Marine,
    Stalker,
    Zealot,
}

impl UnitKind {
    pub const ALL: [UnitKind; 3] = [UnitKind::Marine, UnitKind::Stalker, UnitKind::Zealot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn glyph(self, team: Team) -> char {
        let c = match self {
            UnitKind::Marine => 'm',
            UnitKind::Stalker => 's',
            UnitKind::Zealot => 'z',
        };
        match team {
            Team::Controlled => c,
            Team::Enemy => c.to_ascii_uppercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Controlled,
    Enemy,
}

impl Team {
    pub fn sign(self) -> f64 {
        match self {
            Team::Controlled => 1.0,
            Team::Enemy => -1.0,
        }
    }

    pub fn opponent(self) -> Team {
        match self {
            Team::Controlled => Team::Enemy,
            Team::Enemy => Team::Controlled,
        }
    }
}

/// Static per-type combat statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTypeSpec {
    pub kind: UnitKind,
    pub max_health: f64,
    /// Euclidean reach in cells.
    pub attack_range: f64,
    pub damage_per_hit: f64,
    /// Cells moved per `Move` action.
    pub move_speed: f64,
    /// Steps between consecutive attacks; 1 fires every step.
    pub cooldown: u32,
    pub influence_strength: f64,
}

impl UnitTypeSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.max_health,
            self.attack_range,
            self.damage_per_hit,
            self.move_speed,
            self.influence_strength,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.cooldown == 0 {
            return Err(Error::Config(format!(
                "{:?}: unit statistics must be strictly positive",
                self.kind
            )));
        }
        if self.kind == UnitKind::Zealot && self.attack_range != 1.0 {
            return Err(Error::Config("zealots are melee (attack_range = 1)".into()));
        }
        if self.kind != UnitKind::Zealot && self.attack_range < 1.0 {
            return Err(Error::Config(format!(
                "{:?} is ranged and needs attack_range >= 1",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(self, other: Position) -> f64 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Position) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn delta(self) -> (f64, f64) {
        match self {
            Direction::North => (0.0, 1.0),
            Direction::South => (0.0, -1.0),
            Direction::East => (1.0, 0.0),
            Direction::West => (-1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionCommand {
    NoOp,
    Stop,
    Move(Direction),
    /// Attack the unit in the given slot of the opposing team.
    Attack(usize),
}

impl ActionCommand {
    pub fn to_index(self) -> usize {
        match self {
            ActionCommand::NoOp => 0,
            ActionCommand::Stop => 1,
            ActionCommand::Move(d) => 2 + d as usize,
            ActionCommand::Attack(k) => ATTACK_OFFSET + k,
        }
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => ActionCommand::NoOp,
            1 => ActionCommand::Stop,
            2..=5 => ActionCommand::Move(Direction::ALL[index - 2]),
            k => ActionCommand::Attack(k - ATTACK_OFFSET),
        }
    }
}

impl fmt::Display for ActionCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionCommand::NoOp => write!(f, "noop"),
            ActionCommand::Stop => write!(f, "stop"),
            ActionCommand::Move(d) => write!(f, "move:{d:?}"),
            ActionCommand::Attack(k) => write!(f, "attack:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub unit_id: usize,
    pub team: Team,
    pub unit_type: UnitTypeSpec,
    pub position: Position,
    pub health: f64,
    pub cooldown_remaining: u32,
    pub alive: bool,
}

impl UnitState {
    pub fn health_fraction(&self) -> f64 {
        self.health / self.unit_type.max_health
    }

    pub fn in_range_of(&self, target: &UnitState) -> bool {
        let r = self.unit_type.attack_range;
        self.position.distance_sq(target.position) <= r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub shared_reward: f64,
    pub terminal: bool,
    pub victory: bool,
    /// Health actually removed from enemies this step.
    pub damage_dealt: f64,
    pub kills: usize,
}

/// Complete simulator state. Controlled units occupy `unit_id`s
/// `0..n_controlled`, enemies follow.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    spec: Arc<ScenarioSpec>,
    units: Vec<UnitState>,
    step: u32,
    seed: u64,
    terminal: bool,
}

impl WorldState {
    /// Resets a scenario. The engine is deterministic, so `seed` is only
    /// carried along for bookkeeping and replay headers.
    pub fn load(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut units = Vec::with_capacity(spec.n_controlled() + spec.n_enemies());
        for (team, spawns, fraction) in [
            (Team::Controlled, &spec.controlled_units, 1.0),
            (Team::Enemy, &spec.enemy_units, spec.enemy_health_fraction),
        ] {
            for spawn in spawns {
                units.push(UnitState {
                    unit_id: units.len(),
                    team,
                    unit_type: spawn.unit_type,
                    position: spawn.position,
                    health: spawn.unit_type.max_health * fraction,
                    cooldown_remaining: 0,
                    alive: true,
                });
            }
        }
        Ok(Self {
            spec: Arc::new(spec.clone()),
            units,
            step: 0,
            seed,
            terminal: false,
        })
    }

    /// Builds a state from explicit unit states, for fixtures and replays.
    /// Units must be ordered controlled first, with `unit_id` equal to index.
    pub fn from_units(spec: &ScenarioSpec, units: Vec<UnitState>, step: u32) -> Result<Self> {
        let n_c = units.iter().filter(|u| u.team == Team::Controlled).count();
        for (i, u) in units.iter().enumerate() {
            let expected = if i < n_c { Team::Controlled } else { Team::Enemy };
            if u.unit_id != i || u.team != expected {
                return Err(Error::Config(format!(
                    "unit {i} must have unit_id {i} and team {expected:?}"
                )));
            }
            if u.alive != (u.health > 0.0) || u.health < 0.0 || !spec.in_bounds(u.position) {
                return Err(Error::Config(format!("unit {i} has inconsistent state")));
            }
        }
        if n_c != spec.n_controlled() || units.len() - n_c != spec.n_enemies() {
            return Err(Error::Config("unit counts do not match the scenario".into()));
        }
        let mut world = Self {
            spec: Arc::new(spec.clone()),
            units,
            step,
            seed: 0,
            terminal: false,
        };
        world.terminal = world.team_eliminated(Team::Controlled)
            || world.team_eliminated(Team::Enemy)
            || step >= spec.max_episode_steps;
        Ok(world)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn units(&self) -> &[UnitState] {
        &self.units
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn n_controlled(&self) -> usize {
        self.spec.n_controlled()
    }

    pub fn n_enemies(&self) -> usize {
        self.spec.n_enemies()
    }

    /// Size of a controlled agent's discrete action space.
    pub fn n_actions(&self) -> usize {
        ATTACK_OFFSET + self.n_enemies()
    }

    pub fn team_units(&self, team: Team) -> &[UnitState] {
        let n_c = self.n_controlled();
        match team {
            Team::Controlled => &self.units[..n_c],
            Team::Enemy => &self.units[n_c..],
        }
    }

    pub fn controlled(&self) -> &[UnitState] {
        self.team_units(Team::Controlled)
    }

    pub fn enemies(&self) -> &[UnitState] {
        self.team_units(Team::Enemy)
    }

    pub fn agent(&self, agent_id: usize) -> Result<&UnitState> {
        self.controlled().get(agent_id).ok_or(Error::Lookup {
            kind: "agent",
            id: agent_id,
        })
    }

    pub fn living_agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.controlled()
            .iter()
            .enumerate()
            .filter(|(_, u)| u.alive)
            .map(|(i, _)| i)
    }

    fn team_eliminated(&self, team: Team) -> bool {
        self.team_units(team).iter().all(|u| !u.alive)
    }

    /// Legal-action mask for one controlled agent.
    pub fn legal_actions(&self, agent_id: usize) -> Result<Vec<bool>> {
        let unit = self.agent(agent_id)?;
        Ok(legal_mask(&self.spec, unit, self.enemies()))
    }

    /// Advances the world one step with the scripted opponent driving the enemy team.
    pub fn step(&self, joint_actions: &[ActionCommand]) -> Result<(WorldState, StepOutcome)> {
        let enemy_actions = scripted_opponent(self);
        self.step_with_enemy_actions(joint_actions, &enemy_actions)
    }

    /// Advances the world with explicit actions for both teams.
    pub fn step_with_enemy_actions(
        &self,
        controlled_actions: &[ActionCommand],
        enemy_actions: &[ActionCommand],
    ) -> Result<(WorldState, StepOutcome)> {
        if self.terminal {
            return Err(Error::Contract("step called on a terminal world".into()));
        }
        if controlled_actions.len() != self.n_controlled() {
            return Err(Error::Validation(format!(
                "expected {} controlled actions, got {}",
                self.n_controlled(),
                controlled_actions.len()
            )));
        }
        if enemy_actions.len() != self.n_enemies() {
            return Err(Error::Validation(format!(
                "expected {} enemy actions, got {}",
                self.n_enemies(),
                enemy_actions.len()
            )));
        }
        let n_c = self.n_controlled();
        for (team, actions, offset) in [
            (Team::Controlled, controlled_actions, 0),
            (Team::Enemy, enemy_actions, n_c),
        ] {
            let targets = self.team_units(team.opponent());
            for (i, action) in actions.iter().enumerate() {
                let unit = &self.units[offset + i];
                let mask = legal_mask(&self.spec, unit, targets);
                if !mask.get(action.to_index()).copied().unwrap_or(false) {
                    return Err(Error::IllegalAction {
                        agent: unit.unit_id,
                        action: action.to_string(),
                    });
                }
            }
        }
        let actions: Vec<ActionCommand> = controlled_actions
            .iter()
            .chain(enemy_actions)
            .copied()
            .collect();

        let mut next = self.units.clone();

        // Movement.
        for (unit, action) in next.iter_mut().zip(&actions) {
            if let ActionCommand::Move(dir) = action {
                unit.position = moved(&self.spec, unit, *dir);
            }
        }

        // Attacks, against start-of-step positions and health.
        let mut incoming = vec![0.0; next.len()];
        let mut fired = vec![false; next.len()];
        for (unit, action) in self.units.iter().zip(&actions) {
            if let ActionCommand::Attack(slot) = *action {
                if unit.cooldown_remaining > 0 {
                    continue;
                }
                let target = &self.team_units(unit.team.opponent())[slot];
                if target.alive && unit.in_range_of(target) {
                    incoming[target.unit_id] += unit.unit_type.damage_per_hit;
                    fired[unit.unit_id] = true;
                }
            }
        }

        // Deaths.
        let mut damage_dealt = 0.0;
        let mut kills = 0;
        for unit in next.iter_mut() {
            let hit = incoming[unit.unit_id];
            if hit <= 0.0 || !unit.alive {
                continue;
            }
            let lost = hit.min(unit.health);
            unit.health -= lost;
            if unit.health <= 0.0 {
                unit.health = 0.0;
                unit.alive = false;
                unit.cooldown_remaining = 0;
            }
            if unit.team == Team::Enemy {
                damage_dealt += lost;
                if !unit.alive {
                    kills += 1;
                }
            }
        }

        // Cooldowns.
        for unit in next.iter_mut().filter(|u| u.alive) {
            if fired[unit.unit_id] {
                unit.cooldown_remaining = unit.unit_type.cooldown;
            }
            unit.cooldown_remaining = unit.cooldown_remaining.saturating_sub(1);
        }

        let mut world = WorldState {
            spec: Arc::clone(&self.spec),
            units: next,
            step: self.step + 1,
            seed: self.seed,
            terminal: false,
        };
        let enemies_gone = world.team_eliminated(Team::Enemy);
        let allies_gone = world.team_eliminated(Team::Controlled);
        let victory = enemies_gone && !allies_gone;
        world.terminal =
            enemies_gone || allies_gone || world.step >= self.spec.max_episode_steps;
        let outcome = StepOutcome {
            shared_reward: compute_reward(damage_dealt, kills, victory, &self.spec),
            terminal: world.terminal,
            victory,
            damage_dealt,
            kills,
        };
        Ok((world, outcome))
    }

    /// Sum of current enemy health.
    pub fn enemy_health(&self) -> f64 {
        self.enemies().iter().map(|u| u.health).sum()
    }
}

fn moved(spec: &ScenarioSpec, unit: &UnitState, dir: Direction) -> Position {
    let (dx, dy) = dir.delta();
    let s = unit.unit_type.move_speed;
    Position {
        x: (unit.position.x + dx * s).clamp(0.0, spec.map_width),
        y: (unit.position.y + dy * s).clamp(0.0, spec.map_height),
    }
}

fn legal_mask(spec: &ScenarioSpec, unit: &UnitState, targets: &[UnitState]) -> Vec<bool> {
    let mut mask = vec![false; ATTACK_OFFSET + targets.len()];
    if !unit.alive {
        mask[0] = true;
        return mask;
    }
    mask[1] = true;
    for dir in Direction::ALL {
        mask[ActionCommand::Move(dir).to_index()] = moved(spec, unit, dir) != unit.position;
    }
    for (k, target) in targets.iter().enumerate() {
        mask[ATTACK_OFFSET + k] = target.alive && unit.in_range_of(target);
    }
    mask
}
