use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_TRAINER: &str = "episodes = 3\nmaim_grid = 16\nconv_filters = 4\nmaim_feature_dim = 8\ndense_width = 16\nrunning_window = 2\n";

fn imarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imarl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn campaign_toml(dir: &Path, scenario: &str, workers: usize) -> String {
    format!(
        "scenario = \"{scenario}\"\nseeds = [2, 1]\nworkers = {workers}\nout_dir = \"{}\"\n\n[trainer]\n{TINY_TRAINER}",
        dir.display()
    )
}

#[test]
fn train_writes_metrics_and_a_replay_that_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("trainer.toml");
    fs::write(&cfg, TINY_TRAINER).unwrap();
    let metrics = dir.path().join("out/metrics.csv");
    let replay = dir.path().join("out/last.jsonl");
    let out = imarl(&[
        "train",
        "--config",
        p(&cfg),
        "--seed",
        "5",
        "--metrics",
        p(&metrics),
        "--replay",
        p(&replay),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let table = imarl_core::harness::read_metrics_file(&metrics).unwrap();
    assert_eq!(table.records.len(), 3);
    assert_eq!(table.window, 2);
    let last_length = table.records.last().unwrap().length as usize;

    let maim_dir = dir.path().join("maims");
    let out = imarl(&["replay", p(&replay), "--maim-dir", p(&maim_dir), "--grid", "16"]);
    assert!(out.status.success());
    let frames = stdout(&out).lines().filter(|l| l.starts_with("3m step ")).count();
    assert_eq!(frames, last_length);
    assert_eq!(fs::read_dir(&maim_dir).unwrap().count(), last_length);
}

#[test]
fn campaign_is_identical_across_worker_counts_and_compares_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut merged = Vec::new();
    for workers in [1, 2] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let cfg = dir.path().join(format!("w{workers}.toml"));
        fs::write(&cfg, campaign_toml(&out_dir, "3m", workers)).unwrap();
        let out = imarl(&["campaign", p(&cfg)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("dense_cnn 3m: Min"));
        merged.push(fs::read(out_dir.join("metrics.csv")).unwrap());
        for seed in [1, 2] {
            assert!(out_dir.join(format!("seeds/seed_{seed}.csv")).exists());
        }
    }
    assert_eq!(merged[0], merged[1]);

    let summary = dir.path().join("w1/summary.json");
    let out = imarl(&["compare", p(&summary), p(&summary)]);
    assert!(out.status.success());
    let report = stdout(&out);
    assert!(report.contains("median first-win episode"));
    for line in report.lines().filter(|l| l.contains(" delta ")) {
        let delta = line.split(" delta ").nth(1).unwrap().trim_start();
        assert!(delta.starts_with("+0.00") || delta.starts_with("n/a"), "{line}");
    }
}

#[test]
fn comparing_different_scenarios_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for scenario in ["3m", "8m"] {
        let out_dir = dir.path().join(scenario);
        let cfg = dir.path().join(format!("{scenario}.toml"));
        fs::write(&cfg, campaign_toml(&out_dir, scenario, 1).replace("seeds = [2, 1]", "seeds = [0]")).unwrap();
        assert!(imarl(&["campaign", p(&cfg)]).status.success());
        summaries.push(out_dir.join("summary.json"));
    }
    let out = imarl(&["compare", p(&summaries[0]), p(&summaries[1])]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_on_a_small_budget() {
    let out = imarl(&["gradcheck", "--instances", "3", "--full-size-instances", "1"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("[PASS] dense"));
    assert!(text.contains("actor_dense_cnn_full_size"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seeds = []\n").unwrap();
    assert_eq!(imarl(&["campaign", p(&bad)]).status.code(), Some(1));

    let trainer = dir.path().join("t.toml");
    fs::write(&trainer, "gamma = 2.0\n").unwrap();
    assert_eq!(imarl(&["train", "--config", p(&trainer)]).status.code(), Some(1));

    let log = dir.path().join("broken.jsonl");
    fs::write(&log, "{ not json\n").unwrap();
    let out = imarl(&["replay", p(&log)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    assert_eq!(imarl(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(imarl(&["train", "--scenario", "nowhere"]).status.code(), Some(1));
}
