//! Experiment harness: metrics files, multi-seed campaigns, cross-seed
//! statistics, method comparison and replay rendering.

mod campaign;
mod curve;
mod metrics;
mod replay;
mod summary;

pub use campaign::{method_name, run_campaign, CampaignOutcome, RunConfig, DEFAULT_SEED_COUNT};
pub use curve::{average_curve, text_plot, write_curve_csv, CurvePoint, CURVE_COLUMNS};
pub use metrics::{
    first_win_episode, metrics_csv_string, read_metrics_csv, read_metrics_file, running_average, write_metrics_csv,
    MetricsRecord, MetricsTable, METRICS_COLUMNS,
};
pub use replay::{maim_image, render_frame, render_replay, RenderedReplay};
pub use summary::{
    aggregate_seeds, compare_methods, percent_change, Comparison, FailedSeed, MetricDelta, SeedMetrics, SeedSummary,
    SummaryStats,
};
