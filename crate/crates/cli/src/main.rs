//! `imarl`: train, run campaigns, compare summaries, render replays and
//! check gradients.
//!
//! Exit codes: 0 on success, 1 for invalid input or a failed check, 2 for
//! runtime faults.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use imarl_core::engine::{ReplayLog, ReplayWriter};
use imarl_core::harness::{
    compare_methods, maim_image, render_frame, run_campaign, text_plot, write_metrics_csv, RunConfig, SummaryStats,
};
use imarl_core::marl::{train_env_with, CombatEnv, TrainerConfig};
use imarl_core::neural::gradcheck::{run_suite, GradcheckOptions};
use imarl_core::neural::Architecture;
use imarl_core::{AimParams, Error, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "imarl", version, about = "Influence-map multi-agent actor-critic laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one seed on one scenario.
    Train(TrainArgs),
    /// Run a multi-seed campaign described by a TOML file.
    Campaign(CampaignArgs),
    /// Compare two campaign summaries of the same scenario.
    Compare(CompareArgs),
    /// Render a replay log as text frames.
    Replay(ReplayArgs),
    /// Finite-difference check of every layer and network.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Shipped scenario name (3m, 8m, 25m, 2s3z) or scenario file.
    #[arg(long, default_value = "3m")]
    scenario: String,
    /// Trainer settings in TOML; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training episodes.
    #[arg(long)]
    episodes: Option<u32>,
    /// dense_cnn or dense_only.
    #[arg(long, value_parser = parse_architecture)]
    architecture: Option<Architecture>,
    /// Scale every enemy's starting health, in (0, 1].
    #[arg(long)]
    enemy_health_fraction: Option<f64>,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Directory for actor and critic checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Save checkpoints every this many episodes.
    #[arg(long, requires = "checkpoint_dir")]
    checkpoint_every: Option<u32>,
    /// Write the last training episode as a replay log.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// Campaign TOML file.
    config: PathBuf,
    /// Overrides the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Baseline summary.json.
    baseline: PathBuf,
    /// Candidate summary.json.
    candidate: PathBuf,
    /// Print the comparison as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Replay log written by `train --replay`.
    log: PathBuf,
    /// Also write one PGM image of the influence map per frame here.
    #[arg(long)]
    maim_dir: Option<PathBuf>,
    /// Side of the influence grid for the images.
    #[arg(long, default_value_t = 64)]
    grid: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random instances per layer and reduced-size network check.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Instances of the full-size composites; 0 skips them.
    #[arg(long, default_value_t = 100)]
    full_size_instances: usize,
    /// Seed of the random instances.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    match s {
        "dense_cnn" => Ok(Architecture::DenseCnn),
        "dense_only" => Ok(Architecture::DenseOnly),
        _ => Err(format!("unknown architecture {s:?}; expected dense_cnn or dense_only")),
    }
}

/// A failure and its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.downcast_ref::<Error>().map_or(2, |e| e.exit_code() as u8);
        Self { code, error }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Campaign(args) => cmd_campaign(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn create_file(path: &Path) -> anyhow::Result<io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(io::BufWriter::new(file))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => TrainerConfig::from_file(path)?,
        None => TrainerConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.episodes {
        config.episodes = n;
    }
    if let Some(arch) = args.architecture {
        config.architecture = arch;
    }
    if let Some(n) = args.checkpoint_every {
        config.checkpoint_every = n;
    }
    config.validate()?;
    let mut spec = ScenarioSpec::load(&args.scenario)?;
    if let Some(f) = args.enemy_health_fraction {
        spec = spec.with_enemy_health_fraction(f)?;
    }

    let mut env = CombatEnv::new(&spec, config.aim_params(), config.seed)?;
    let last = config.episodes.checked_sub(1);
    let record = args.replay.is_some();
    let output = train_env_with(&mut env, &config, args.checkpoint_dir.as_deref(), |env, episode| {
        if record && Some(episode) == last {
            env.record_replay(true);
        }
    })?;

    match &args.metrics {
        Some(path) => write_metrics_csv(create_file(path)?, config.running_window, &output.metrics)?,
        None => write_metrics_csv(io::stdout().lock(), config.running_window, &output.metrics)?,
    }
    if let Some(path) = &args.replay {
        let mut writer = ReplayWriter::new(create_file(path)?);
        for r in env.take_replay() {
            writer.write(&r)?;
        }
        writer.into_inner().flush().context("flushing replay")?;
    }
    let wins = output.metrics.iter().filter(|m| m.win).count();
    let last_avg = output.metrics.last().map_or(0.0, |m| m.running_avg);
    eprintln!(
        "trained {} episodes on {} (seed {}): {} victories, final running average {:.3}",
        output.metrics.len(),
        spec.name,
        config.seed,
        wins,
        last_avg
    );
    Ok(())
}

fn cmd_campaign(args: CampaignArgs) -> CmdResult {
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(dir) = args.out_dir {
        config.out_dir = dir;
    }
    let outcome = run_campaign(&config)?;
    print!("{}", outcome.summary.report());
    print!("{}", text_plot(&outcome.curve, 60, 11));
    println!("wrote {}", config.out_dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let baseline = SummaryStats::load(&args.baseline)?;
    let candidate = SummaryStats::load(&args.candidate)?;
    let comparison = compare_methods(&baseline, &candidate)?;
    if args.json {
        print!("{}", comparison.to_json()?);
    } else {
        print!("{}", comparison.report());
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> CmdResult {
    let file = fs::File::open(&args.log).with_context(|| format!("opening {}", args.log.display()))?;
    let log = ReplayLog::read(BufReader::new(file))?;
    let aim = AimParams::with_grid(args.grid, args.grid);
    if args.maim_dir.is_some() {
        aim.validate()?;
    }
    let mut stdout = io::stdout().lock();
    for (i, record) in log.records.iter().enumerate() {
        write!(stdout, "{}", render_frame(record)).context("writing frame")?;
        if let Some(dir) = &args.maim_dir {
            let path = dir.join(format!("maim_{i:04}.pgm"));
            create_file(&path)?
                .write_all(&maim_image(record, &aim))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let opts = GradcheckOptions {
        instances: args.instances,
        full_size_instances: args.full_size_instances,
        seed: args.seed,
        ..GradcheckOptions::default()
    };
    let started = std::time::Instant::now();
    let results = run_suite(&opts)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "[{}] {:<28} instances {:>4} coords {:>6} max rel err {:.3e} (tol {:.0e}, kink exclusions {})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.instances,
            r.coordinates,
            r.max_relative_error,
            r.tolerance,
            r.kink_exclusions
        );
        failed += usize::from(!r.passed());
    }
    println!("{} checks, {} failed, {:.1}s", results.len(), failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(Failure {
            code: 1,
            error: anyhow::anyhow!("{failed} gradient checks failed"),
        });
    }
    Ok(())
}
