//! Learning curve averaged across seeds.

use std::fmt::Write as _;
use std::io::Write;

use crate::engine::MAX_EPISODE_REWARD;
use crate::error::{Error, Result};

use super::summary::SeedMetrics;

/// Mean running-average reward of all seeds that reached `episode`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: u32,
    pub mean_running_avg: f64,
    pub seeds: usize,
}

pub const CURVE_COLUMNS: &str = "episode,mean_running_avg,seeds";

/// Averages the running-average column across seeds, aligned by episode
/// index with no further smoothing. Seeds are summed in the given order.
pub fn average_curve(streams: &[SeedMetrics]) -> Vec<CurvePoint> {
    let mut sums: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for stream in streams {
        for r in &stream.records {
            let entry = sums.entry(r.episode).or_default();
            entry.0 += r.running_avg;
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(episode, (sum, seeds))| CurvePoint {
            episode,
            mean_running_avg: sum / seeds as f64,
            seeds,
        })
        .collect()
}

/// Writes the curve as CSV under the same `# window=N` comment line as the
/// metrics files.
pub fn write_curve_csv<W: Write>(mut out: W, window: usize, points: &[CurvePoint]) -> Result<()> {
    let mut text = format!("# window={window}\n{CURVE_COLUMNS}\n");
    for p in points {
        let _ = writeln!(text, "{},{:.6},{}", p.episode, p.mean_running_avg, p.seeds);
    }
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Error::io("<curve>", e))
}

/// Plain-text plot of the curve on the fixed reward range: one column per
/// bucket of episodes, one `*` per column at the bucket mean.
pub fn text_plot(points: &[CurvePoint], width: usize, height: usize) -> String {
    if points.is_empty() || width == 0 || height < 2 {
        return String::new();
    }
    let columns = width.min(points.len());
    let levels: Vec<usize> = (0..columns)
        .map(|c| {
            let bucket = &points[c * points.len() / columns..(c + 1) * points.len() / columns];
            let mean = bucket.iter().map(|p| p.mean_running_avg).sum::<f64>() / bucket.len() as f64;
            let frac = (mean / MAX_EPISODE_REWARD).clamp(0.0, 1.0);
            (frac * (height - 1) as f64).round() as usize
        })
        .collect();
    let mut out = String::new();
    for row in (0..height).rev() {
        let label = match row {
            r if r == height - 1 => format!("{MAX_EPISODE_REWARD:>4.0}"),
            0 => format!("{:>4}", 0),
            _ => " ".repeat(4),
        };
        let line: String = levels.iter().map(|&l| if l == row { '*' } else { ' ' }).collect();
        let _ = writeln!(out, "{label} |{}", line.trim_end());
    }
    let _ = writeln!(out, "     +{}", "-".repeat(columns));
    let (first, last) = (points[0].episode, points[points.len() - 1].episode);
    let _ = writeln!(out, "      episodes {first}..={last}, mean running average over seeds");
    out
}
