//! Multi-seed training campaigns.
//!
//! A campaign writes into its output directory:
//!
//! - `seeds/seed_<S>.csv`: the metrics stream of seed `S`;
//! - `metrics.csv`: every successful seed's rows, sorted by seed then episode;
//! - `curve.csv`: the running average averaged across seeds per episode;
//! - `summary.json`: the [`SummaryStats`] of the successful seeds, including
//!   the list of failed ones;
//! - `checkpoints/seed_<S>/` when checkpointing is enabled.
//!
//! Each seed trains on its own random streams and writes only its own file,
//! so the outputs do not depend on the worker count.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::ScenarioSpec;
use crate::error::{Error, Result};
use crate::marl::{train, TrainerConfig};
use crate::neural::{Architecture, ConvSharing};

use super::curve::{average_curve, write_curve_csv, CurvePoint};
use super::metrics::{read_metrics_file, write_metrics_csv, MetricsRecord};
use super::summary::{aggregate_seeds, FailedSeed, SeedMetrics, SummaryStats};

pub const DEFAULT_SEED_COUNT: u64 = 31;

/// Everything a campaign needs. The trainer's own `seed` and
/// `checkpoint_every` are replaced per run by `seeds` and `checkpoint_every`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shipped scenario name or path to a scenario file.
    pub scenario: String,
    /// Label in summaries; derived from the architecture when absent.
    pub method: Option<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub checkpoint_every: u32,
    pub workers: usize,
    /// Scales enemy starting health; `None` keeps the scenario's value.
    pub enemy_health_fraction: Option<f64>,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "3m".into(),
            method: None,
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            workers: 1,
            enemy_health_fraction: None,
            trainer: TrainerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {dup} is listed twice")));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.trainer.validate()?;
        self.scenario_spec()?;
        Ok(())
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let spec = ScenarioSpec::load(&self.scenario)?;
        match self.enemy_health_fraction {
            Some(f) => spec.with_enemy_health_fraction(f),
            None => Ok(spec),
        }
    }

    pub fn method_label(&self) -> String {
        self.method.clone().unwrap_or_else(|| method_name(&self.trainer).into())
    }

    /// The trainer configuration of one seed.
    pub fn trainer_for(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            checkpoint_every: self.checkpoint_every,
            ..self.trainer.clone()
        }
    }

    pub fn seed_csv_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join("seeds").join(format!("seed_{seed}.csv"))
    }

    pub fn merged_csv_path(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out_dir.join("summary.json")
    }

    pub fn curve_path(&self) -> PathBuf {
        self.out_dir.join("curve.csv")
    }
}

pub fn method_name(config: &TrainerConfig) -> &'static str {
    match (config.architecture, config.conv_sharing) {
        (Architecture::DenseOnly, _) => "dense_only",
        (Architecture::DenseCnn, ConvSharing::Shared) => "dense_cnn",
        (Architecture::DenseCnn, ConvSharing::PerLayer) => "dense_cnn_per_layer",
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub summary: SummaryStats,
    /// Successful seeds' rows, sorted by seed then episode.
    pub metrics: Vec<MetricsRecord>,
    pub curve: Vec<CurvePoint>,
}

fn run_seed(config: &RunConfig, spec: &ScenarioSpec, seed: u64) -> Result<()> {
    let trainer = config.trainer_for(seed);
    let ckpt_dir = config.out_dir.join("checkpoints").join(format!("seed_{seed}"));
    let output = train(spec, &trainer, (config.checkpoint_every > 0).then_some(ckpt_dir.as_path()))?;
    for failure in &output.checkpoint_failures {
        log::warn!("seed {seed}: {failure}");
    }
    let path = config.seed_csv_path(seed);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_metrics_csv(std::io::BufWriter::new(file), trainer.running_window, &output.metrics)
}

/// Trains every seed, writes the CSV and summary artifacts and returns the
/// aggregate. Seeds that fail are logged, listed in the summary and left out
/// of the statistics; the campaign fails only when no seed succeeds.
pub fn run_campaign(config: &RunConfig) -> Result<CampaignOutcome> {
    config.validate()?;
    let spec = config.scenario_spec()?;
    let seeds_dir = config.out_dir.join("seeds");
    std::fs::create_dir_all(&seeds_dir).map_err(|e| Error::io(&seeds_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    let results: Vec<(u64, Result<()>)> =
        pool.install(|| seeds.par_iter().map(|&seed| (seed, run_seed(config, &spec, seed))).collect());

    // Aggregation reads the files back so the summary is exactly what the
    // CSVs reproduce.
    let mut streams = Vec::new();
    let mut failed = Vec::new();
    for (seed, result) in results {
        match result.and_then(|()| read_metrics_file(config.seed_csv_path(seed))) {
            Ok(table) => streams.push(SeedMetrics { seed, records: table.records }),
            Err(e) => {
                log::warn!("seed {seed} failed and is excluded from the summary: {e}");
                failed.push(FailedSeed { seed, error: e.to_string() });
            }
        }
    }
    if streams.is_empty() {
        let detail: Vec<String> = failed.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
        return Err(Error::Campaign(detail.join("; ")));
    }

    let metrics: Vec<MetricsRecord> = streams.iter().flat_map(|s| s.records.iter().cloned()).collect();
    let merged = config.merged_csv_path();
    let file = std::fs::File::create(&merged).map_err(|e| Error::io(&merged, e))?;
    write_metrics_csv(std::io::BufWriter::new(file), config.trainer.running_window, &metrics)?;

    let curve = average_curve(&streams);
    let curve_path = config.curve_path();
    let file = std::fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    write_curve_csv(std::io::BufWriter::new(file), config.trainer.running_window, &curve)?;

    let mut summary = aggregate_seeds(&spec.name, &config.method_label(), config.trainer.running_window, &streams)?;
    summary.failed_seeds = failed;
    let path = config.summary_path();
    std::fs::write(&path, summary.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(CampaignOutcome { summary, metrics, curve })
}
