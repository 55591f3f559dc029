use std::fs;
use std::path::Path;

use imarl_core::engine::{ReplayLog, Team};
use imarl_core::harness::{aggregate_seeds, read_metrics_file, render_replay, run_campaign, running_average, SeedMetrics};
use imarl_core::marl::{train, CombatEnv, Environment, Trainer};
use imarl_core::{Architecture, EpsilonSchedule, RunConfig, ScenarioSpec, TrainerConfig};

fn tiny(episodes: u32, architecture: Architecture) -> TrainerConfig {
    TrainerConfig {
        episodes,
        architecture,
        maim_grid: 8,
        conv_filters: 4,
        maim_feature_dim: 8,
        dense_width: 16,
        running_window: 4,
        ..TrainerConfig::default()
    }
}

fn toy_campaign(out_dir: &Path, workers: usize) -> RunConfig {
    RunConfig {
        seeds: vec![7, 3, 5],
        workers,
        out_dir: out_dir.to_path_buf(),
        trainer: tiny(6, Architecture::DenseCnn),
        ..RunConfig::default()
    }
}

#[test]
fn fully_random_policy_only_submits_legal_actions() {
    // 250 episodes on each shipped scenario; any illegal action aborts training.
    for (i, name) in ["3m", "8m", "25m", "2s3z"].into_iter().enumerate() {
        let spec = ScenarioSpec::shipped(name).unwrap();
        let config = TrainerConfig {
            seed: i as u64,
            epsilon: EpsilonSchedule {
                epsilon_0: 1.0,
                epsilon_min: 1.0,
                decay_episodes: 1,
            },
            ..tiny(250, Architecture::DenseOnly)
        };
        let out = train(&spec, &config, None).unwrap();
        assert_eq!(out.metrics.len(), 250);
        assert!(out.metrics.iter().all(|m| m.epsilon == 1.0 && (0.0..=20.0).contains(&m.reward)));
    }
}

#[test]
fn buffer_agrees_with_the_recorded_replay() {
    let spec = ScenarioSpec::shipped("3m").unwrap();
    let config = tiny(3, Architecture::DenseCnn);
    let mut env = CombatEnv::new(&spec, config.aim_params(), config.seed).unwrap();
    let mut trainer = Trainer::new(&env, &config).unwrap();
    for _ in 0..3 {
        env.record_replay(true);
        let (buffer, record) = trainer.train_episode(&mut env).unwrap();
        let replay = env.take_replay();
        assert_eq!(replay.len(), buffer.length());
        assert_eq!(record.length as usize, replay.len());
        for (step, frame) in replay.iter().enumerate() {
            let living = frame.units.iter().filter(|u| u.team == Team::Controlled && u.alive).count();
            let recorded = buffer.transitions.iter().filter(|t| t.step == step).count();
            assert_eq!(recorded, living, "step {step}");
            assert_eq!(frame.reward, buffer.rewards[step]);
        }

        let text: String = replay.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        let rendered = render_replay(&ReplayLog::parse(&text).unwrap(), Some(&config.aim_params()));
        assert_eq!(rendered.frames.len(), buffer.length());
        assert_eq!(rendered.maim_images.len(), buffer.length());
    }
    assert!(env.is_terminal());
}

#[test]
fn campaign_summary_is_reproducible_from_the_seed_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_campaign(&dir.path().join("a"), 1);
    let outcome = run_campaign(&config).unwrap();
    assert!(outcome.summary.failed_seeds.is_empty());
    assert_eq!(outcome.summary.seeds.len(), 3);

    let mut streams = Vec::new();
    for seed in [3, 5, 7] {
        let table = read_metrics_file(config.seed_csv_path(seed)).unwrap();
        assert_eq!(table.window, 4);
        assert_eq!(table.records.len(), 6);
        let recomputed = running_average(&table.rewards(), table.window).unwrap();
        for (row, avg) in table.records.iter().zip(&recomputed) {
            assert!((row.running_avg - avg).abs() <= 1e-6, "seed {seed} episode {}", row.episode);
            assert_eq!(row.seed, seed);
        }
        streams.push(SeedMetrics { seed, records: table.records });
    }
    let rebuilt = aggregate_seeds("3m", "dense_cnn", 4, &streams).unwrap();
    assert_eq!(rebuilt, outcome.summary);

    let merged = read_metrics_file(config.merged_csv_path()).unwrap();
    assert_eq!(merged.records, outcome.metrics);
    let seeds: Vec<u64> = merged.records.iter().map(|r| r.seed).collect();
    assert!(seeds.windows(2).all(|w| w[0] <= w[1]));

    let on_disk = fs::read_to_string(config.summary_path()).unwrap();
    assert_eq!(imarl_core::SummaryStats::from_json(&on_disk).unwrap(), outcome.summary);
}

#[test]
fn rerunning_a_campaign_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let first = toy_campaign(&dir.path().join("first"), 1);
    let second = toy_campaign(&dir.path().join("second"), 2);
    run_campaign(&first).unwrap();
    run_campaign(&second).unwrap();
    for seed in [3, 5, 7] {
        assert_eq!(fs::read(first.seed_csv_path(seed)).unwrap(), fs::read(second.seed_csv_path(seed)).unwrap());
    }
    assert_eq!(fs::read(first.merged_csv_path()).unwrap(), fs::read(second.merged_csv_path()).unwrap());
    assert_eq!(fs::read(first.summary_path()).unwrap(), fs::read(second.summary_path()).unwrap());
    assert_eq!(fs::read(first.curve_path()).unwrap(), fs::read(second.curve_path()).unwrap());
}
