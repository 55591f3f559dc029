//! Agent influence maps and their signed aggregate.
//!
//! A living unit radiates `sign × strength × health_fraction × falloff(d)`
//! around the grid cell that contains it, where `d` is the Euclidean
//! distance between cell indices and the falloff is zero beyond `radius`.
//! Controlled units have sign +1, enemies −1. World coordinates map onto the
//! grid by uniform scaling; there is no sub-cell splatting.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Position, ReplayUnit, ScenarioSpec, Team, UnitState, WorldState};
use crate::error::{Error, Result};
use crate::neural::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Falloff {
    /// `max(0, 1 - d / radius)`
    Linear,
    /// `1 / (1 + d)` inside the radius.
    InverseDistance,
}

impl Falloff {
    pub fn weight(self, distance: f64, radius: f64) -> f64 {
        if distance > radius {
            return 0.0;
        }
        match self {
            Falloff::Linear => (1.0 - distance / radius).max(0.0),
            Falloff::InverseDistance => 1.0 / (1.0 + distance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AimParams {
    pub grid_width: usize,
    pub grid_height: usize,
    pub falloff: Falloff,
    /// Footprint radius in grid cells.
    pub radius: f64,
}

impl Default for AimParams {
    fn default() -> Self {
        Self::with_grid(64, 64)
    }
}

impl AimParams {
    /// Linear falloff with the default radius of one eighth of the grid width.
    pub fn with_grid(grid_width: usize, grid_height: usize) -> Self {
        Self {
            grid_width,
            grid_height,
            falloff: Falloff::Linear,
            radius: grid_width as f64 / 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_width < 8 || self.grid_height < 8 {
            return Err(Error::Config(format!(
                "influence grid {}x{} is smaller than 8x8",
                self.grid_width, self.grid_height
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config("influence radius must be positive".into()));
        }
        Ok(())
    }

    /// Grid cell `(column, row)` containing a world position.
    pub fn project(&self, x: f64, y: f64, map_dims: (f64, f64)) -> (usize, usize) {
        let cell = |v: f64, extent: f64, cells: usize| -> usize {
            let c = (v / extent * cells as f64).floor();
            (c.max(0.0) as usize).min(cells - 1)
        };
        (
            cell(x, map_dims.0, self.grid_width),
            cell(y, map_dims.1, self.grid_height),
        )
    }
}

/// Row-major scalar field; row index is the grid y coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl InfluenceGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn add_assign(&mut self, other: &InfluenceGrid) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain-text dump: one grid row per line (row 0 first), values
    /// space-separated in `{:.6}` format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("not a number: {t:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected {w} columns, found {}", row.len()),
                    })
                }
                _ => {}
            }
            values.extend(row);
            height += 1;
        }
        Ok(Self {
            width: width.unwrap_or(0),
            height,
            values,
        })
    }

    /// Binary PGM (`P5`) export. Header is `P5\n<width> <height>\n255\n`;
    /// pixels map `[-scale, scale]` linearly onto `[0, 255]` (0 influence is
    /// mid-gray 128) and the top image row is the highest grid row, so north
    /// is up.
    pub fn write_pgm(&self, out: &mut impl Write, scale: f64) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let mut pixels = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width).rev() {
            for v in row {
                let t = ((v / scale).clamp(-1.0, 1.0) + 1.0) / 2.0;
                pixels.push((t * 255.0).round() as u8);
            }
        }
        out.write_all(&pixels)
    }
}

/// The state a unit's influence depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceSource {
    pub team: Team,
    pub position: Position,
    pub strength: f64,
    pub health_fraction: f64,
    pub alive: bool,
}

impl From<&UnitState> for InfluenceSource {
    fn from(u: &UnitState) -> Self {
        Self {
            team: u.team,
            position: u.position,
            strength: u.unit_type.influence_strength,
            health_fraction: u.health_fraction(),
            alive: u.alive,
        }
    }
}

impl From<&ReplayUnit> for InfluenceSource {
    fn from(u: &ReplayUnit) -> Self {
        Self {
            team: u.team,
            position: Position::new(u.x, u.y),
            strength: u.influence_strength,
            health_fraction: u.health / u.max_health,
            alive: u.alive,
        }
    }
}

/// Influence map radiated by a single unit. Dead units produce a zero grid.
pub fn agent_influence(unit: &UnitState, params: &AimParams, map_dims: (f64, f64)) -> InfluenceGrid {
    let mut grid = InfluenceGrid::zeros(params.grid_width, params.grid_height);
    splat(&mut grid, &unit.into(), params, map_dims);
    grid
}

fn splat(grid: &mut InfluenceGrid, unit: &InfluenceSource, params: &AimParams, map_dims: (f64, f64)) {
    if !unit.alive {
        return;
    }
    let amplitude = unit.team.sign() * unit.strength * unit.health_fraction;
    let (cx, cy) = params.project(unit.position.x, unit.position.y, map_dims);
    let reach = params.radius.floor() as usize;
    let x0 = cx.saturating_sub(reach);
    let x1 = (cx + reach).min(params.grid_width - 1);
    let y0 = cy.saturating_sub(reach);
    let y1 = (cy + reach).min(params.grid_height - 1);
    for row in y0..=y1 {
        for col in x0..=x1 {
            let dx = col as f64 - cx as f64;
            let dy = row as f64 - cy as f64;
            let w = params.falloff.weight((dx * dx + dy * dy).sqrt(), params.radius);
            if w != 0.0 {
                grid.values[row * grid.width + col] += amplitude * w;
            }
        }
    }
}

/// Sums the influence of every living unit of both teams.
pub fn aggregate_units<'a>(
    units: impl IntoIterator<Item = &'a UnitState>,
    params: &AimParams,
    map_dims: (f64, f64),
) -> InfluenceGrid {
    aggregate_sources(units.into_iter().map(InfluenceSource::from), params, map_dims)
}

pub fn aggregate_sources(
    sources: impl IntoIterator<Item = InfluenceSource>,
    params: &AimParams,
    map_dims: (f64, f64),
) -> InfluenceGrid {
    let mut grid = InfluenceGrid::zeros(params.grid_width, params.grid_height);
    for source in sources {
        splat(&mut grid, &source, params, map_dims);
    }
    grid
}

/// The multi-agent influence map of a world.
pub fn aggregate_maim(world: &WorldState, params: &AimParams) -> InfluenceGrid {
    let spec = world.spec();
    aggregate_units(world.units(), params, (spec.map_width, spec.map_height))
}

/// Largest absolute influence any cell can reach in this scenario: all of
/// one team's strengths stacked on a single cell at full health.
pub fn maim_normalizer(spec: &ScenarioSpec) -> f64 {
    let total = |units: &[crate::engine::UnitSpawn]| -> f64 {
        units.iter().map(|s| s.unit_type.influence_strength).sum()
    };
    total(&spec.controlled_units).max(total(&spec.enemy_units))
}

/// Divides by `normalizer` and shapes the grid as a `1 × H × W` tensor.
pub fn encode_maim<T: Real>(grid: &InfluenceGrid, normalizer: f64) -> Tensor<T> {
    let data = grid
        .values
        .iter()
        .map(|v| T::from_f64((v / normalizer).clamp(-1.0, 1.0)))
        .collect();
    Tensor::from_vec(vec![1, grid.height, grid.width], data)
        .expect("grid length matches its dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Position, Team, UnitKind, UnitTypeSpec};

    fn unit(team: Team, x: f64, y: f64, health: f64) -> UnitState {
        UnitState {
            unit_id: 0,
            team,
            unit_type: UnitTypeSpec {
                kind: UnitKind::Marine,
                max_health: 40.0,
                attack_range: 6.0,
                damage_per_hit: 3.0,
                move_speed: 1.0,
                cooldown: 2,
                influence_strength: 1.5,
            },
            position: Position::new(x, y),
            health,
            cooldown_remaining: 0,
            alive: health > 0.0,
        }
    }

    const MAP: (f64, f64) = (32.0, 32.0);

    #[test]
    fn dead_unit_radiates_nothing() {
        let g = agent_influence(&unit(Team::Controlled, 3.0, 3.0, 0.0), &AimParams::default(), MAP);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_radius_is_a_single_cell() {
        let params = AimParams {
            radius: 0.5,
            ..AimParams::default()
        };
        let g = agent_influence(&unit(Team::Controlled, 10.2, 20.7, 40.0), &params, MAP);
        let nonzero: Vec<(usize, f64)> = g
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        // 10.2 / 32 * 64 = 20.4 -> col 20; 20.7 / 32 * 64 = 41.4 -> row 41.
        assert_eq!(nonzero, vec![(41 * 64 + 20, 1.5)]);
    }

    #[test]
    fn enemy_at_center_matches_per_cell_loop() {
        let params = AimParams {
            radius: 5.0,
            ..AimParams::default()
        };
        let u = unit(Team::Enemy, 16.0, 16.0, 40.0);
        let g = agent_influence(&u, &params, MAP);
        for row in 0..64 {
            for col in 0..64 {
                let d = (((col as f64) - 32.0).powi(2) + ((row as f64) - 32.0).powi(2)).sqrt();
                let expected = if d <= 5.0 { -1.5 * (1.0 - d / 5.0) } else { 0.0 };
                assert!((g.get(col, row) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn opposite_teams_cancel() {
        let a = unit(Team::Controlled, 8.0, 8.0, 30.0);
        let b = unit(Team::Enemy, 8.3, 8.1, 30.0);
        let g = aggregate_units([&a, &b], &AimParams::default(), MAP);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_normalizes_to_unit_peak() {
        let mut g = InfluenceGrid::zeros(8, 8);
        g.values[9] = 3.0;
        let t: Tensor<f64> = encode_maim(&g, 3.0);
        assert_eq!(t.shape(), &[1, 8, 8]);
        assert_eq!(t.data()[9], 1.0);
        assert!(encode_maim::<f32>(&InfluenceGrid::zeros(8, 8), 3.0)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn text_dump_round_trips_and_pgm_has_header() {
        let mut g = InfluenceGrid::zeros(8, 8);
        g.values[3] = -0.5;
        g.values[60] = 0.25;
        assert_eq!(InfluenceGrid::from_text(&g.to_text()).unwrap(), g);
        let mut bytes = Vec::new();
        g.write_pgm(&mut bytes, 1.0).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(bytes.len(), 11 + 64);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(AimParams::with_grid(4, 64).validate().is_err());
        assert!(AimParams::default().validate().is_ok());
    }
}
