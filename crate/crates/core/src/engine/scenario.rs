use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Position, UnitKind, UnitTypeSpec};

/// Default sight radius in cells for local observations.
pub const DEFAULT_SIGHT_RANGE: f64 = 9.0;

const SHIPPED: [(&str, &str); 4] = [
    ("3m", include_str!("../../scenarios/3m.toml")),
    ("8m", include_str!("../../scenarios/8m.toml")),
    ("25m", include_str!("../../scenarios/25m.toml")),
    ("2s3z", include_str!("../../scenarios/2s3z.toml")),
];

/// One unit placement in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSpawn {
    pub unit_type: UnitTypeSpec,
    pub position: Position,
}

/// A fully resolved scenario: map, both teams and episode limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub map_width: f64,
    pub map_height: f64,
    pub controlled_units: Vec<UnitSpawn>,
    pub enemy_units: Vec<UnitSpawn>,
    pub max_episode_steps: u32,
    /// Enemy units start at this fraction of their max health.
    pub enemy_health_fraction: f64,
    pub sight_range: f64,
    /// Number of nearest enemies and nearest allies encoded in an observation.
    pub observation_slots: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    map_width: f64,
    map_height: f64,
    max_episode_steps: u32,
    #[serde(default = "one")]
    enemy_health_fraction: f64,
    #[serde(default = "default_sight")]
    sight_range: f64,
    observation_slots: Option<usize>,
    unit_types: BTreeMap<UnitKind, UnitStats>,
    #[serde(default)]
    controlled: Vec<Placement>,
    #[serde(default)]
    enemy: Vec<Placement>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitStats {
    max_health: f64,
    attack_range: f64,
    damage_per_hit: f64,
    move_speed: f64,
    cooldown: u32,
    influence_strength: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Placement {
    unit: UnitKind,
    x: f64,
    y: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sight() -> f64 {
    DEFAULT_SIGHT_RANGE
}

impl ScenarioSpec {
    /// Parses the TOML scenario format and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario file: {}", e.message())))?;
        let resolve = |placements: &[Placement]| -> Result<Vec<UnitSpawn>> {
            placements
                .iter()
                .map(|p| {
                    let stats = file.unit_types.get(&p.unit).ok_or_else(|| {
                        Error::Config(format!("unit type {:?} has no [unit_types] entry", p.unit))
                    })?;
                    Ok(UnitSpawn {
                        unit_type: UnitTypeSpec {
                            kind: p.unit,
                            max_health: stats.max_health,
                            attack_range: stats.attack_range,
                            damage_per_hit: stats.damage_per_hit,
                            move_speed: stats.move_speed,
                            cooldown: stats.cooldown,
                            influence_strength: stats.influence_strength,
                        },
                        position: Position::new(p.x, p.y),
                    })
                })
                .collect()
        };
        let controlled_units = resolve(&file.controlled)?;
        let enemy_units = resolve(&file.enemy)?;
        let observation_slots = file.observation_slots.unwrap_or_else(|| {
            enemy_units
                .len()
                .max(controlled_units.len().saturating_sub(1))
        });
        let spec = ScenarioSpec {
            name: file.name,
            map_width: file.map_width,
            map_height: file.map_height,
            controlled_units,
            enemy_units,
            max_episode_steps: file.max_episode_steps,
            enemy_health_fraction: file.enemy_health_fraction,
            sight_range: file.sight_range,
            observation_slots,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// One of the four bundled scenarios: `3m`, `8m`, `25m`, `2s3z`.
    pub fn shipped(name: &str) -> Result<Self> {
        let (_, text) = SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no shipped scenario named {name:?}")))?;
        Self::from_toml_str(text)
    }

    pub fn shipped_names() -> impl Iterator<Item = &'static str> {
        SHIPPED.iter().map(|(n, _)| *n)
    }

    /// Resolves `name_or_path` as a shipped scenario name first, then as a file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if SHIPPED.iter().any(|(n, _)| *n == name_or_path) {
            Self::shipped(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Self::from_file(name_or_path)
        } else {
            let names: Vec<&str> = Self::shipped_names().collect();
            Err(Error::Config(format!(
                "unknown scenario {name_or_path:?}: neither a shipped name ({}) nor a file",
                names.join(", ")
            )))
        }
    }

    pub fn with_enemy_health_fraction(mut self, fraction: f64) -> Result<Self> {
        self.enemy_health_fraction = fraction;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario {:?}: {msg}", self.name)));
        if !(self.map_width > 0.0 && self.map_height > 0.0) {
            return bad("map dimensions must be positive".into());
        }
        if self.controlled_units.is_empty() || self.enemy_units.is_empty() {
            return bad("each team needs at least one unit".into());
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be at least 1".into());
        }
        if !(self.enemy_health_fraction > 0.0 && self.enemy_health_fraction <= 1.0) {
            return bad(format!(
                "enemy_health_fraction {} outside (0, 1]",
                self.enemy_health_fraction
            ));
        }
        if self.sight_range.is_nan() || self.sight_range <= 0.0 {
            return bad("sight_range must be positive".into());
        }
        if self.observation_slots == 0 {
            return bad("observation_slots must be at least 1".into());
        }
        let all: Vec<&UnitSpawn> = self
            .controlled_units
            .iter()
            .chain(&self.enemy_units)
            .collect();
        for (i, spawn) in all.iter().enumerate() {
            spawn.unit_type.validate()?;
            let p = spawn.position;
            if !self.in_bounds(p) {
                return bad(format!("spawn {i} at ({}, {}) is out of bounds", p.x, p.y));
            }
            if all[..i].iter().any(|other| other.position == p) {
                return bad(format!("spawn {i} at ({}, {}) duplicates another", p.x, p.y));
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.x.is_finite()
            && p.y.is_finite()
            && (0.0..=self.map_width).contains(&p.x)
            && (0.0..=self.map_height).contains(&p.y)
    }

    pub fn n_controlled(&self) -> usize {
        self.controlled_units.len()
    }

    pub fn n_enemies(&self) -> usize {
        self.enemy_units.len()
    }

    /// Sum of enemy starting health after the health fraction is applied.
    pub fn total_enemy_health(&self) -> f64 {
        self.enemy_units
            .iter()
            .map(|s| s.unit_type.max_health * self.enemy_health_fraction)
            .sum()
    }
}
