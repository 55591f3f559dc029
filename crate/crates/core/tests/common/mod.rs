//! Fixtures and independent oracles shared by the integration tests.

#![allow(dead_code)]

use imarl_core::engine::{Team, UnitState, WorldState};
use imarl_core::{ActionCommand, AimParams, Falloff, ScenarioSpec};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TYPE_BLOCK: &str = r#"
[unit_types.marine]
max_health = 45.0
attack_range = 6.0
damage_per_hit = 3.0
move_speed = 1.0
cooldown = 2
influence_strength = 1.0

[unit_types.stalker]
max_health = 80.0
attack_range = 6.0
damage_per_hit = 8.0
move_speed = 1.0
cooldown = 3
influence_strength = 1.5

[unit_types.zealot]
max_health = 100.0
attack_range = 1.0
damage_per_hit = 8.0
move_speed = 1.0
cooldown = 2
influence_strength = 2.0
"#;

const KINDS: [&str; 3] = ["marine", "stalker", "zealot"];

/// A scenario on a `map × map` field with the given spawns, each
/// `(controlled, kind index, x, y)`.
pub fn scenario_with(map: f64, spawns: &[(bool, usize, f64, f64)]) -> ScenarioSpec {
    let mut text = format!(
        "name = \"random\"\nmap_width = {map:?}\nmap_height = {map:?}\nmax_episode_steps = 100\nobservation_slots = 3\n{TYPE_BLOCK}"
    );
    for controlled in [true, false] {
        for &(c, kind, x, y) in spawns.iter().filter(|s| s.0 == controlled) {
            let section = if c { "controlled" } else { "enemy" };
            text += &format!("\n[[{section}]]\nunit = \"{}\"\nx = {x:?}\ny = {y:?}\n", KINDS[kind]);
        }
    }
    ScenarioSpec::from_toml_str(&text).expect("generated scenario is valid")
}

/// Random world with `1..=max_units` units (at least one per team) on a
/// `map × map` field; some units are damaged and some dead.
pub fn random_world(rng: &mut impl Rng, max_units: usize, map: f64) -> WorldState {
    let n = rng.gen_range(2..=max_units);
    let n_controlled = rng.gen_range(1..n);
    let spawns: Vec<(bool, usize, f64, f64)> = (0..n)
        .map(|i| {
            (
                i < n_controlled,
                rng.gen_range(0..3),
                rng.gen_range(0.0..map),
                rng.gen_range(0.0..map),
            )
        })
        .collect();
    let spec = scenario_with(map, &spawns);
    let mut world = WorldState::load(&spec, 0).unwrap();
    let mut units = world.units().to_vec();
    for u in &mut units {
        match rng.gen_range(0..4) {
            0 => {
                u.health = 0.0;
                u.alive = false;
            }
            1 => u.health = u.unit_type.max_health * rng.gen_range(0.05..1.0),
            _ => {}
        }
    }
    world = WorldState::from_units(&spec, units, 0).unwrap();
    world
}

/// Cell containing a world coordinate under uniform scaling.
fn cell(v: f64, extent: f64, cells: usize) -> i64 {
    let c = (v / extent * cells as f64).floor() as i64;
    c.clamp(0, cells as i64 - 1)
}

/// Influence of every living unit at every cell, summed by brute force
/// over the whole grid.
pub fn brute_force_maim(units: &[UnitState], params: &AimParams, map: (f64, f64)) -> Vec<f64> {
    let (gw, gh) = (params.grid_width, params.grid_height);
    let mut out = vec![0.0; gw * gh];
    for u in units.iter().filter(|u| u.alive) {
        let sign = if u.team == Team::Controlled { 1.0 } else { -1.0 };
        let amp = sign * u.unit_type.influence_strength * u.health / u.unit_type.max_health;
        let (cx, cy) = (cell(u.position.x, map.0, gw), cell(u.position.y, map.1, gh));
        for row in 0..gh {
            for col in 0..gw {
                let d = (((col as i64 - cx).pow(2) + (row as i64 - cy).pow(2)) as f64).sqrt();
                let w = if d > params.radius {
                    0.0
                } else {
                    match params.falloff {
                        Falloff::Linear => 1.0 - d / params.radius,
                        Falloff::InverseDistance => 1.0 / (1.0 + d),
                    }
                };
                out[row * gw + col] += amp * w;
            }
        }
    }
    out
}

/// Uniformly random legal action for every controlled agent.
pub fn random_legal_joint(world: &WorldState, rng: &mut impl Rng) -> Vec<ActionCommand> {
    (0..world.n_controlled())
        .map(|agent| {
            let mask = world.legal_actions(agent).unwrap();
            let legal: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
            ActionCommand::from_index(*legal.choose(rng).expect("some action is always legal"))
        })
        .collect()
}

/// Total health of the enemy team.
pub fn enemy_health(world: &WorldState) -> f64 {
    world.enemies().iter().map(|u| u.health).sum()
}
