//! Cross-seed aggregation and method comparison.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::{first_win_episode, MetricsRecord};

/// The metrics stream of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub peak_running_avg: f64,
    pub victories: usize,
    pub first_win: Option<usize>,
}

/// A seed whose run failed and was left out of the aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Aggregate over seeds for one (scenario, method) pair.
///
/// The peak statistics are taken over each seed's maximum running-average
/// reward; `peak_std` is the population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub scenario: String,
    pub method: String,
    pub window: usize,
    pub seeds: Vec<SeedSummary>,
    pub peak_min: f64,
    pub peak_max: f64,
    pub peak_avg: f64,
    pub peak_std: f64,
    pub seeds_with_win: usize,
    pub total_victories: usize,
    /// Over winning seeds only.
    pub first_win_mean: Option<f64>,
    pub first_win_median: Option<f64>,
    #[serde(default)]
    pub failed_seeds: Vec<FailedSeed>,
}

impl SummaryStats {
    /// One line in the layout of a Min / Max / Avg / Std results table.
    pub fn table_row(&self) -> String {
        format!(
            "{} {}: Min {:.2}, Max {:.2}, Avg {:.2}, Std {:.2}",
            self.method, self.scenario, self.peak_min, self.peak_max, self.peak_avg, self.peak_std
        )
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.table_row());
        let _ = writeln!(
            out,
            "seeds {} (window {}), seeds with a win {}, total victories {}",
            self.seeds.len(),
            self.window,
            self.seeds_with_win,
            self.total_victories
        );
        let _ = writeln!(
            out,
            "first win: mean {}, median {}",
            fmt_opt(self.first_win_mean),
            fmt_opt(self.first_win_median)
        );
        for f in &self.failed_seeds {
            let _ = writeln!(out, "failed seed {}: {}", f.seed, f.error);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stats: Self = serde_json::from_str(text)?;
        if !(stats.peak_min <= stats.peak_avg && stats.peak_avg <= stats.peak_max && stats.peak_std >= 0.0) {
            return Err(Error::Validation(format!(
                "summary for {} {} violates min <= avg <= max, std >= 0",
                stats.method, stats.scenario
            )));
        }
        Ok(stats)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.1}"))
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Folds per-seed metric streams into one [`SummaryStats`].
pub fn aggregate_seeds(scenario: &str, method: &str, window: usize, streams: &[SeedMetrics]) -> Result<SummaryStats> {
    if streams.is_empty() {
        return Err(Error::Validation("aggregation needs at least one seed".into()));
    }
    let mut seeds = Vec::with_capacity(streams.len());
    for s in streams {
        let peak = s
            .records
            .iter()
            .map(|r| r.running_avg)
            .reduce(f64::max)
            .ok_or_else(|| Error::Validation(format!("seed {} has no episodes", s.seed)))?;
        let wins: Vec<bool> = s.records.iter().map(|r| r.win).collect();
        seeds.push(SeedSummary {
            seed: s.seed,
            episodes: s.records.len(),
            peak_running_avg: peak,
            victories: wins.iter().filter(|&&w| w).count(),
            first_win: first_win_episode(&wins),
        });
    }
    let peaks: Vec<f64> = seeds.iter().map(|s| s.peak_running_avg).collect();
    let n = peaks.len() as f64;
    let peak_min = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    let peak_max = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The clamp absorbs last-ulp drift of the mean when all peaks are equal.
    let peak_avg = (peaks.iter().sum::<f64>() / n).clamp(peak_min, peak_max);
    let peak_std = (peaks.iter().map(|p| (p - peak_avg).powi(2)).sum::<f64>() / n).sqrt();
    let mut first_wins: Vec<f64> = seeds.iter().filter_map(|s| s.first_win).map(|e| e as f64).collect();
    first_wins.sort_by(f64::total_cmp);
    Ok(SummaryStats {
        scenario: scenario.to_string(),
        method: method.to_string(),
        window,
        peak_min,
        peak_max,
        peak_avg,
        peak_std,
        seeds_with_win: first_wins.len(),
        total_victories: seeds.iter().map(|s| s.victories).sum(),
        first_win_mean: (!first_wins.is_empty()).then(|| first_wins.iter().sum::<f64>() / first_wins.len() as f64),
        first_win_median: median(&first_wins),
        seeds,
        failed_seeds: Vec::new(),
    })
}

/// One compared quantity. `percent` is `(candidate - baseline) / |baseline|`
/// in percent, truncated to two decimals, and absent when the baseline is
/// zero or either side is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub baseline: Option<f64>,
    pub candidate: Option<f64>,
    pub delta: Option<f64>,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub baseline_method: String,
    pub candidate_method: String,
    pub metrics: Vec<MetricDelta>,
    pub baseline_first_win_median: Option<f64>,
    pub candidate_first_win_median: Option<f64>,
}

impl Comparison {
    pub fn metric(&self, name: &str) -> Option<&MetricDelta> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {}: {} (baseline) vs {} (candidate)",
            self.scenario, self.baseline_method, self.candidate_method
        );
        for m in &self.metrics {
            let side = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:.2}"));
            let delta = m.delta.map_or_else(|| "n/a".to_string(), |d| format!("{d:+.2}"));
            let pct = m.percent.map_or_else(|| "n/a".to_string(), |p| format!("{p:+.2}%"));
            let _ = writeln!(
                out,
                "{:<26} {:>10} -> {:<10} delta {:>8} ({})",
                m.metric,
                side(m.baseline),
                side(m.candidate),
                delta,
                pct
            );
        }
        let _ = writeln!(
            out,
            "median first-win episode: {} {}, {} {}",
            self.baseline_method,
            fmt_opt(self.baseline_first_win_median),
            self.candidate_method,
            fmt_opt(self.candidate_first_win_median)
        );
        out
    }
}

/// Percentage change truncated (not rounded) to two decimals.
pub fn percent_change(baseline: f64, candidate: f64) -> Option<f64> {
    if baseline == 0.0 {
        return None;
    }
    let pct = (candidate - baseline) / baseline.abs() * 100.0;
    // The nudge keeps values such as 18.40 that land a hair below their
    // decimal from truncating one step down.
    Some(((pct * 100.0) + pct.signum() * 1e-6).trunc() / 100.0)
}

pub fn compare_methods(baseline: &SummaryStats, candidate: &SummaryStats) -> Result<Comparison> {
    if baseline.scenario != candidate.scenario {
        return Err(Error::Validation(format!(
            "cannot compare different scenarios: {} vs {}",
            baseline.scenario, candidate.scenario
        )));
    }
    let entry = |metric: &str, b: Option<f64>, c: Option<f64>| {
        let both = b.zip(c);
        MetricDelta {
            metric: metric.to_string(),
            baseline: b,
            candidate: c,
            delta: both.map(|(b, c)| c - b),
            percent: both.and_then(|(b, c)| percent_change(b, c)),
        }
    };
    let metrics = vec![
        entry("max running average", Some(baseline.peak_max), Some(candidate.peak_max)),
        entry("min running average", Some(baseline.peak_min), Some(candidate.peak_min)),
        entry("avg running average", Some(baseline.peak_avg), Some(candidate.peak_avg)),
        entry("std running average", Some(baseline.peak_std), Some(candidate.peak_std)),
        entry(
            "seeds with a win",
            Some(baseline.seeds_with_win as f64),
            Some(candidate.seeds_with_win as f64),
        ),
        entry(
            "total victories",
            Some(baseline.total_victories as f64),
            Some(candidate.total_victories as f64),
        ),
        entry("mean first-win episode", baseline.first_win_mean, candidate.first_win_mean),
        entry("median first-win episode", baseline.first_win_median, candidate.first_win_median),
    ];
    Ok(Comparison {
        scenario: baseline.scenario.clone(),
        baseline_method: baseline.method.clone(),
        candidate_method: candidate.method.clone(),
        metrics,
        baseline_first_win_median: baseline.first_win_median,
        candidate_first_win_median: candidate.first_win_median,
    })
}
