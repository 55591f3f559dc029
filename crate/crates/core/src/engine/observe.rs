use crate::error::Result;

use super::{Team, UnitKind, UnitState, WorldState};

/// Per-slot features: relative x, relative y, distance, health, one-hot type (3), visible.
pub const FEATURES_PER_SLOT: usize = 4 + UnitKind::ALL.len() + 1;
const OWN_FEATURES: usize = 4;

/// Fixed-length local observation of one controlled agent.
///
/// Layout: own health fraction, own cooldown flag, own x / map width,
/// own y / map height, then `observation_slots` enemy slots and
/// `observation_slots` ally slots, each nearest-first, each
/// [`FEATURES_PER_SLOT`] wide. Relative offsets and distance are divided
/// by the sight range. Empty slots are zero, including the visibility flag.
pub type Observation = Vec<f64>;

pub fn observation_len(slots: usize) -> usize {
    OWN_FEATURES + 2 * slots * FEATURES_PER_SLOT
}

pub fn observe(world: &WorldState, agent_id: usize) -> Result<Observation> {
    let spec = world.spec();
    let me = world.agent(agent_id)?;
    let slots = spec.observation_slots;
    let mut obs = vec![0.0; observation_len(slots)];
    if !me.alive {
        return Ok(obs);
    }
    obs[0] = me.health_fraction();
    obs[1] = if me.cooldown_remaining > 0 { 1.0 } else { 0.0 };
    obs[2] = me.position.x / spec.map_width;
    obs[3] = me.position.y / spec.map_height;

    let sight = spec.sight_range;
    let visible = |team: Team| -> Vec<&UnitState> {
        let mut seen: Vec<&UnitState> = world
            .team_units(team)
            .iter()
            .filter(|u| {
                u.alive
                    && u.unit_id != me.unit_id
                    && me.position.distance_sq(u.position) <= sight * sight
            })
            .collect();
        seen.sort_by(|a, b| {
            let da = me.position.distance_sq(a.position);
            let db = me.position.distance_sq(b.position);
            da.total_cmp(&db).then(a.unit_id.cmp(&b.unit_id))
        });
        seen.truncate(slots);
        seen
    };

    for (block, team) in [(0, Team::Enemy), (1, Team::Controlled)] {
        let base = OWN_FEATURES + block * slots * FEATURES_PER_SLOT;
        for (k, other) in visible(team).into_iter().enumerate() {
            let f = &mut obs[base + k * FEATURES_PER_SLOT..base + (k + 1) * FEATURES_PER_SLOT];
            f[0] = (other.position.x - me.position.x) / sight;
            f[1] = (other.position.y - me.position.y) / sight;
            f[2] = me.position.distance(other.position) / sight;
            f[3] = other.health_fraction();
            f[4 + other.unit_type.kind.index()] = 1.0;
            f[FEATURES_PER_SLOT - 1] = 1.0;
        }
    }
    for v in obs.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Position, ScenarioSpec, UnitSpawn, UnitTypeSpec, DEFAULT_SIGHT_RANGE};

    fn marine(hp: f64) -> UnitTypeSpec {
        UnitTypeSpec {
            kind: UnitKind::Marine,
            max_health: hp,
            attack_range: 6.0,
            damage_per_hit: 3.0,
            move_speed: 1.0,
            cooldown: 2,
            influence_strength: 1.0,
        }
    }

    fn stalker() -> UnitTypeSpec {
        UnitTypeSpec {
            kind: UnitKind::Stalker,
            max_health: 80.0,
            attack_range: 6.0,
            damage_per_hit: 8.0,
            move_speed: 1.0,
            cooldown: 3,
            influence_strength: 1.5,
        }
    }

    fn spec(controlled: Vec<UnitSpawn>, enemy: Vec<UnitSpawn>, slots: usize) -> ScenarioSpec {
        ScenarioSpec {
            name: "fixture".into(),
            map_width: 20.0,
            map_height: 20.0,
            controlled_units: controlled,
            enemy_units: enemy,
            max_episode_steps: 10,
            enemy_health_fraction: 1.0,
            sight_range: DEFAULT_SIGHT_RANGE,
            observation_slots: slots,
        }
    }

    fn at(unit_type: UnitTypeSpec, x: f64, y: f64) -> UnitSpawn {
        UnitSpawn {
            unit_type,
            position: Position::new(x, y),
        }
    }

    #[test]
    fn lone_enemy_due_east() {
        let s = spec(vec![at(marine(40.0), 10.0, 10.0)], vec![at(marine(40.0), 14.0, 10.0)], 1);
        let world = WorldState::load(&s, 0).unwrap();
        let obs = observe(&world, 0).unwrap();
        assert_eq!(obs.len(), observation_len(1));
        assert!(obs[4] > 0.0);
        assert_eq!(obs[5], 0.0);
    }

    #[test]
    fn dead_agent_sees_zeros() {
        let s = spec(vec![at(marine(40.0), 10.0, 10.0)], vec![at(marine(40.0), 14.0, 10.0)], 1);
        let mut units = WorldState::load(&s, 0).unwrap().units().to_vec();
        units[0].health = 0.0;
        units[0].alive = false;
        let world = WorldState::from_units(&s, units, 3).unwrap();
        assert!(observe(&world, 0).unwrap().iter().all(|&v| v == 0.0));
    }

    /// Two allies, two enemies (one beyond sight), hand-assembled expectation.
    #[test]
    fn two_by_two_fixture_matches_hand_vector() {
        let s = spec(
            vec![at(marine(40.0), 5.0, 5.0), at(marine(40.0), 5.0, 8.0)],
            vec![at(stalker(), 8.0, 9.0), at(marine(40.0), 19.0, 5.0)],
            2,
        );
        let mut units = WorldState::load(&s, 0).unwrap().units().to_vec();
        units[0].cooldown_remaining = 1;
        units[1].health = 10.0;
        units[2].health = 20.0;
        let world = WorldState::from_units(&s, units, 0).unwrap();
        let obs = observe(&world, 0).unwrap();

        #[rustfmt::skip]
        let expected = vec![
            // own: health 1, cooldown flag, x 5/20, y 5/20
            1.0, 1.0, 0.25, 0.25,
            // enemy slot 0: stalker at (+3,+4), distance 5, health 20/80
            3.0 / 9.0, 4.0 / 9.0, 5.0 / 9.0, 0.25, 0.0, 1.0, 0.0, 1.0,
            // enemy slot 1: marine at distance 14 > 9, not visible
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            // ally slot 0: marine at (0,+3), health 10/40
            0.0, 3.0 / 9.0, 3.0 / 9.0, 0.25, 1.0, 0.0, 0.0, 1.0,
            // ally slot 1: none
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(obs.len(), expected.len());
        for (i, (a, b)) in obs.iter().zip(&expected).enumerate() {
            assert!((a - b).abs() < 1e-12, "entry {i}: {a} vs {b}");
        }
    }
}
