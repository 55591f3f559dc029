//! Plain-text rendering of replay logs.

use std::fmt::Write as _;

use crate::engine::{ReplayLog, ReplayRecord, Team};
use crate::influence::{aggregate_sources, AimParams, InfluenceSource};

/// Frames of a replay and, when requested, one grayscale MAIM image per frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderedReplay {
    pub frames: Vec<String>,
    /// Binary PGM files, one per frame.
    pub maim_images: Vec<Vec<u8>>,
}

/// Renders one frame per record. The map is drawn one character per map
/// cell with north up: lowercase glyphs are controlled units, uppercase are
/// enemies, `*` marks a cell holding several living units. A health line
/// per unit follows the map.
pub fn render_replay(log: &ReplayLog, maim: Option<&AimParams>) -> RenderedReplay {
    RenderedReplay {
        frames: log.records.iter().map(render_frame).collect(),
        maim_images: maim
            .map(|params| log.records.iter().map(|r| maim_image(r, params)).collect())
            .unwrap_or_default(),
    }
}

pub fn render_frame(record: &ReplayRecord) -> String {
    let cols = (record.map_width.ceil() as usize).max(1);
    let rows = (record.map_height.ceil() as usize).max(1);
    let mut cells = vec![vec![' '; cols]; rows];
    for u in record.units.iter().filter(|u| u.alive) {
        let col = (u.x.max(0.0) as usize).min(cols - 1);
        let row = (u.y.max(0.0) as usize).min(rows - 1);
        let cell = &mut cells[row][col];
        *cell = if *cell == ' ' { u.kind.glyph(u.team) } else { '*' };
    }

    let mut out = String::new();
    let _ = writeln!(out, "{} step {} reward {:.3}", record.scenario, record.step, record.reward);
    let border = format!("+{}+", "-".repeat(cols));
    let _ = writeln!(out, "{border}");
    for row in cells.iter().rev() {
        let _ = writeln!(out, "|{}|", row.iter().collect::<String>());
    }
    let _ = writeln!(out, "{border}");
    let health: Vec<String> = record
        .units
        .iter()
        .map(|u| {
            let tag = format!("{}{}", u.kind.glyph(u.team), u.id);
            if u.alive {
                format!("{tag} {:.1}/{:.1}", u.health, u.max_health)
            } else {
                format!("{tag} dead")
            }
        })
        .collect();
    let _ = writeln!(out, "{}", health.join("  "));
    out
}

/// The MAIM of a record as a binary PGM, scaled by the larger team's total
/// influence strength so a full-health stack is black or white.
pub fn maim_image(record: &ReplayRecord, params: &AimParams) -> Vec<u8> {
    let grid = aggregate_sources(
        record.units.iter().map(InfluenceSource::from),
        params,
        (record.map_width, record.map_height),
    );
    let team_total = |team: Team| -> f64 {
        record
            .units
            .iter()
            .filter(|u| u.team == team)
            .map(|u| u.influence_strength)
            .sum()
    };
    let scale = team_total(Team::Controlled).max(team_total(Team::Enemy)).max(f64::MIN_POSITIVE);
    let mut buf = Vec::new();
    grid.write_pgm(&mut buf, scale).expect("writing to memory cannot fail");
    buf
}
