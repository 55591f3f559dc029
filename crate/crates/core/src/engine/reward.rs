use super::ScenarioSpec;

/// Reward ceiling for a perfect episode.
pub const MAX_EPISODE_REWARD: f64 = 20.0;

/// Hit-point equivalents awarded per enemy kill.
pub const KILL_POINTS: f64 = 10.0;

/// Multiplier that maps a perfect episode (all enemy health destroyed, every
/// enemy killed, victory) onto exactly [`MAX_EPISODE_REWARD`]. The victory
/// bonus equals the total enemy starting health.
pub fn reward_scale(spec: &ScenarioSpec) -> f64 {
    let health = spec.total_enemy_health();
    let perfect = health + KILL_POINTS * spec.n_enemies() as f64 + health;
    MAX_EPISODE_REWARD / perfect
}

pub fn compute_reward(damage_dealt: f64, kills: usize, victory: bool, spec: &ScenarioSpec) -> f64 {
    debug_assert!(damage_dealt >= 0.0);
    let bonus = if victory { spec.total_enemy_health() } else { 0.0 };
    reward_scale(spec) * (damage_dealt + KILL_POINTS * kills as f64 + bonus)
}
