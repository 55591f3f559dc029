//! Per-episode metrics rows and their CSV form.
//!
//! A metrics file starts with a `# window=N` comment naming the running
//! average window, followed by the header
//! `seed,episode,reward,win,epsilon,running_avg,length`. Floats are written
//! with six decimals and `win` as `0`/`1`, so identical runs give identical
//! bytes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::MAX_EPISODE_REWARD;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 7] = ["seed", "episode", "reward", "win", "epsilon", "running_avg", "length"];

/// One row of the per-episode metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    /// 0-based.
    pub episode: u32,
    pub reward: f64,
    pub win: bool,
    pub epsilon: f64,
    pub running_avg: f64,
    pub length: u32,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let bounded = |v: f64| v.is_finite() && (0.0..=MAX_EPISODE_REWARD).contains(&v);
        if !bounded(self.reward) {
            return Err(Error::Validation(format!(
                "seed {} episode {}: reward {} outside [0, {MAX_EPISODE_REWARD}]",
                self.seed, self.episode, self.reward
            )));
        }
        if !bounded(self.running_avg) {
            return Err(Error::Validation(format!(
                "seed {} episode {}: running average {} outside [0, {MAX_EPISODE_REWARD}]",
                self.seed, self.episode, self.running_avg
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!(
                "seed {} episode {}: epsilon {} outside [0, 1]",
                self.seed, self.episode, self.epsilon
            )));
        }
        Ok(())
    }

    fn to_fields(&self) -> [String; 7] {
        [
            self.seed.to_string(),
            self.episode.to_string(),
            format!("{:.6}", self.reward),
            u8::from(self.win).to_string(),
            format!("{:.6}", self.epsilon),
            format!("{:.6}", self.running_avg),
            self.length.to_string(),
        ]
    }

    fn from_fields(fields: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |column: &str, message: String| Error::Parse {
            line,
            message: format!("column {column}: {message}"),
        };
        if fields.len() != METRICS_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", METRICS_COLUMNS.len(), fields.len()),
            });
        }
        fn parse<T: std::str::FromStr>(raw: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim().parse().map_err(|e: T::Err| format!("{raw:?}: {e}"))
        }
        let win = match fields[3].trim() {
            "0" => false,
            "1" => true,
            other => return Err(bad("win", format!("{other:?} is not 0 or 1"))),
        };
        Ok(Self {
            seed: parse(&fields[0]).map_err(|m| bad("seed", m))?,
            episode: parse(&fields[1]).map_err(|m| bad("episode", m))?,
            reward: parse(&fields[2]).map_err(|m| bad("reward", m))?,
            win,
            epsilon: parse(&fields[4]).map_err(|m| bad("epsilon", m))?,
            running_avg: parse(&fields[5]).map_err(|m| bad("running_avg", m))?,
            length: parse(&fields[6]).map_err(|m| bad("length", m))?,
        })
    }
}

/// A parsed metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub window: usize,
    pub records: Vec<MetricsRecord>,
}

impl MetricsTable {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn wins(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.win).collect()
    }
}

/// Writes a metrics file. Every row is validated first; nothing is written
/// if any row is out of bounds.
pub fn write_metrics_csv(out: impl Write, window: usize, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    let mut out = out;
    writeln!(out, "# window={window}").map_err(|e| Error::io("<metrics>", e))?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(METRICS_COLUMNS)?;
    for r in records {
        writer.write_record(r.to_fields())?;
    }
    writer.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn metrics_csv_string(window: usize, records: &[MetricsRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, window, records)?;
    Ok(String::from_utf8(buf).expect("metrics CSV is ASCII"))
}

/// Parses and validates a metrics file; errors carry 1-based line numbers.
pub fn read_metrics_csv(input: impl Read) -> Result<MetricsTable> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io("<metrics>", e))?;
    let window = first
        .trim()
        .strip_prefix("# window=")
        .and_then(|w| w.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("expected `# window=N` with N >= 1, found {:?}", first.trim()),
        })?;
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = csv_reader.headers()?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Parse {
            line: 2,
            message: format!("header must be {}, found {}", METRICS_COLUMNS.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut records = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        // The csv reader counts from its own first line, which is file line 2.
        let line = row.position().map_or(0, |p| p.line() as usize + 1);
        let record = MetricsRecord::from_fields(&row, line)?;
        record.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
        records.push(record);
    }
    Ok(MetricsTable { window, records })
}

pub fn read_metrics_file(path: impl AsRef<Path>) -> Result<MetricsTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics_csv(file)
}

/// Element `t` is the mean of the last `min(t + 1, window)` rewards.
pub fn running_average(rewards: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Validation("running average window must be at least 1".into()));
    }
    Ok((0..rewards.len())
        .map(|t| {
            let tail = &rewards[(t + 1).saturating_sub(window)..=t];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect())
}

/// Index of the first victory, if any.
pub fn first_win_episode(wins: &[bool]) -> Option<usize> {
    wins.iter().position(|&w| w)
}
