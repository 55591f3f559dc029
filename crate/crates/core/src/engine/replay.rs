//! Newline-delimited JSON replay logs.
//!
//! One record per environment step. Each record carries the unit states at
//! the start of the step, the joint actions of both teams and the shared
//! reward the step produced. Map dimensions are repeated on every line so
//! any single record renders on its own.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ActionCommand, Team, UnitKind, UnitState, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayUnit {
    pub id: usize,
    pub team: Team,
    pub kind: UnitKind,
    pub x: f64,
    pub y: f64,
    pub health: f64,
    pub max_health: f64,
    pub cooldown: u32,
    pub alive: bool,
    pub influence_strength: f64,
}

impl From<&UnitState> for ReplayUnit {
    fn from(u: &UnitState) -> Self {
        Self {
            id: u.unit_id,
            team: u.team,
            kind: u.unit_type.kind,
            x: u.position.x,
            y: u.position.y,
            health: u.health,
            max_health: u.unit_type.max_health,
            cooldown: u.cooldown_remaining,
            alive: u.alive,
            influence_strength: u.unit_type.influence_strength,
        }
    }
}

pub type ReplayAction = ActionCommand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub scenario: String,
    pub step: u32,
    pub map_width: f64,
    pub map_height: f64,
    pub units: Vec<ReplayUnit>,
    pub controlled_actions: Vec<ReplayAction>,
    pub enemy_actions: Vec<ReplayAction>,
    pub reward: f64,
}

impl ReplayRecord {
    pub fn new(
        world: &WorldState,
        controlled_actions: &[ActionCommand],
        enemy_actions: &[ActionCommand],
        reward: f64,
    ) -> Self {
        let spec = world.spec();
        Self {
            scenario: spec.name.clone(),
            step: world.step_count(),
            map_width: spec.map_width,
            map_height: spec.map_height,
            units: world.units().iter().map(ReplayUnit::from).collect(),
            controlled_actions: controlled_actions.to_vec(),
            enemy_actions: enemy_actions.to_vec(),
            reward,
        }
    }
}

pub struct ReplayWriter<W: Write> {
    out: W,
}

impl<W: Write> ReplayWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &ReplayRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io("<replay>", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A parsed replay log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayLog {
    pub records: Vec<ReplayRecord>,
}

impl ReplayLog {
    /// Parses a log, reporting the 1-based line of the first malformed record.
    /// Blank lines are skipped.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<replay>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{scripted_actions, scripted_opponent, ScenarioSpec};

    #[test]
    fn writes_and_reads_scripted_episode() {
        let spec = ScenarioSpec::shipped("3m").unwrap();
        let mut world = WorldState::load(&spec, 1).unwrap();
        let mut writer = ReplayWriter::new(Vec::new());
        let mut steps = 0;
        while !world.is_terminal() {
            let ours = scripted_actions(&world, Team::Controlled);
            let theirs = scripted_opponent(&world);
            let (next, out) = world.step_with_enemy_actions(&ours, &theirs).unwrap();
            writer
                .write(&ReplayRecord::new(&world, &ours, &theirs, out.shared_reward))
                .unwrap();
            world = next;
            steps += 1;
        }
        let bytes = writer.into_inner();
        let log = ReplayLog::read(bytes.as_slice()).unwrap();
        assert_eq!(log.records.len(), steps);
        assert_eq!(log.records[0].units.len(), 6);
        assert_eq!(log.records[0].step, 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"not\": \"a record\"}\n";
        match ReplayLog::parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
