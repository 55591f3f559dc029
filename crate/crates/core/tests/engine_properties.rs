mod common;

use common::{enemy_health, random_legal_joint};
use imarl_core::engine::{scripted_actions, ScenarioSpec, Team, WorldState, MAX_EPISODE_REWARD};
use imarl_core::{ActionCommand, Error, StepOutcome};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: [&str; 4] = ["3m", "8m", "25m", "2s3z"];

fn scenario(index: usize, health_fraction: f64) -> ScenarioSpec {
    ScenarioSpec::shipped(SCENARIOS[index]).unwrap().with_enemy_health_fraction(health_fraction).unwrap()
}

/// Plays random legal actions against the scripted opponent to the end.
fn random_episode(spec: &ScenarioSpec, seed: u64) -> Vec<(WorldState, StepOutcome)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = WorldState::load(spec, seed).unwrap();
    let mut trajectory = Vec::new();
    while !world.is_terminal() {
        let joint = random_legal_joint(&world, &mut rng);
        let (next, outcome) = world.step(&joint).unwrap();
        trajectory.push((next.clone(), outcome));
        world = next;
    }
    trajectory
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identical_inputs_give_identical_trajectories(index in 0usize..4, seed in any::<u64>()) {
        let spec = scenario(index, 1.0);
        prop_assert_eq!(random_episode(&spec, seed), random_episode(&spec, seed));
    }

    #[test]
    fn episodes_respect_reward_bounds_and_conserve_damage(
        index in 0usize..4,
        seed in any::<u64>(),
        fraction in prop_oneof![Just(1.0), Just(0.5), 0.05f64..1.0],
    ) {
        let spec = scenario(index, fraction);
        let start = WorldState::load(&spec, seed).unwrap();
        let trajectory = random_episode(&spec, seed);
        let total: f64 = trajectory.iter().map(|(_, o)| o.shared_reward).sum();
        prop_assert!((0.0..=MAX_EPISODE_REWARD + 1e-9).contains(&total), "total {total}");

        let dealt: f64 = trajectory.iter().map(|(_, o)| o.damage_dealt).sum();
        let (last, final_outcome) = trajectory.last().unwrap();
        prop_assert!((enemy_health(&start) - enemy_health(last) - dealt).abs() < 1e-9);

        let mut previous = start;
        for (world, outcome) in &trajectory {
            prop_assert!(outcome.shared_reward >= 0.0);
            prop_assert!(!outcome.victory || outcome.terminal);
            for (before, after) in previous.units().iter().zip(world.units()) {
                prop_assert!(after.health >= 0.0);
                prop_assert_eq!(after.alive, after.health > 0.0);
                if !before.alive {
                    prop_assert_eq!(before, after, "dead units are frozen");
                }
            }
            previous = world.clone();
        }
        let enemies_alive = last.enemies().iter().any(|u| u.alive);
        prop_assert_eq!(final_outcome.victory, !enemies_alive && last.controlled().iter().any(|u| u.alive));
    }

    #[test]
    fn mask_is_exactly_the_accepted_action_set(index in 0usize..4, seed in any::<u64>(), steps in 0usize..60) {
        let spec = scenario(index, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut world = WorldState::load(&spec, seed).unwrap();
        for _ in 0..steps {
            if world.is_terminal() {
                break;
            }
            world = world.step(&random_legal_joint(&world, &mut rng)).unwrap().0;
        }
        prop_assume!(!world.is_terminal());
        let agent = rng.gen_range(0..world.n_controlled());
        let mask = world.legal_actions(agent).unwrap();
        prop_assert!(mask.iter().any(|&m| m));
        // One index past the action space probes a nonexistent enemy slot.
        for action in 0..=mask.len() {
            let mut joint = random_legal_joint(&world, &mut rng);
            joint[agent] = ActionCommand::from_index(action);
            let accepted = world.step(&joint);
            let legal = mask.get(action).copied().unwrap_or(false);
            prop_assert_eq!(accepted.is_ok(), legal, "agent {} action {}", agent, action);
            if let Err(e) = accepted {
                let is_illegal_action = matches!(e, Error::IllegalAction { agent: a, .. } if a == agent);
                prop_assert!(is_illegal_action);
            }
        }
    }
}

#[test]
fn mirror_matches_last_between_30_and_150_steps() {
    for name in SCENARIOS {
        let spec = ScenarioSpec::shipped(name).unwrap();
        let mut world = WorldState::load(&spec, 0).unwrap();
        let mut steps = 0;
        while !world.is_terminal() {
            let ours = scripted_actions(&world, Team::Controlled);
            let theirs = scripted_actions(&world, Team::Enemy);
            world = world.step_with_enemy_actions(&ours, &theirs).unwrap().0;
            steps += 1;
        }
        assert!((30..=150).contains(&steps), "{name}: {steps} steps");
    }
}

#[test]
fn perfect_victory_accumulates_twenty() {
    for name in SCENARIOS {
        let spec = ScenarioSpec::shipped(name).unwrap();
        let mut world = WorldState::load(&spec, 0).unwrap();
        let mut total = 0.0;
        let mut victory = false;
        while !world.is_terminal() {
            let ours = scripted_actions(&world, Team::Controlled);
            let passive: Vec<ActionCommand> = world
                .enemies()
                .iter()
                .map(|u| if u.alive { ActionCommand::Stop } else { ActionCommand::NoOp })
                .collect();
            let (next, outcome) = world.step_with_enemy_actions(&ours, &passive).unwrap();
            total += outcome.shared_reward;
            victory = outcome.victory;
            world = next;
        }
        assert!(victory, "{name}: scripted team beats a passive one");
        assert!((total - 20.0).abs() < 1e-6, "{name}: {total}");
    }
}
