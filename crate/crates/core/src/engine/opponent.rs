use super::{ActionCommand, Direction, Team, WorldState};

/// Scripted policy for the enemy team.
pub fn scripted_opponent(world: &WorldState) -> Vec<ActionCommand> {
    scripted_actions(world, Team::Enemy)
}

/// Nearest-target rule for either team: attack the nearest living opponent
/// when in range, otherwise step along the dominant axis toward it. Distance
/// ties go to the lower `unit_id`; axis ties move horizontally.
pub fn scripted_actions(world: &WorldState, team: Team) -> Vec<ActionCommand> {
    let targets = world.team_units(team.opponent());
    world
        .team_units(team)
        .iter()
        .map(|unit| {
            if !unit.alive {
                return ActionCommand::NoOp;
            }
            let nearest = targets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.alive)
                .min_by(|(_, a), (_, b)| {
                    let da = unit.position.distance_sq(a.position);
                    let db = unit.position.distance_sq(b.position);
                    da.total_cmp(&db).then(a.unit_id.cmp(&b.unit_id))
                });
            let Some((slot, target)) = nearest else {
                return ActionCommand::Stop;
            };
            if unit.in_range_of(target) {
                return ActionCommand::Attack(slot);
            }
            let dx = target.position.x - unit.position.x;
            let dy = target.position.y - unit.position.y;
            let dir = if dx.abs() >= dy.abs() {
                if dx > 0.0 {
                    Direction::East
                } else {
                    Direction::West
                }
            } else if dy > 0.0 {
                Direction::North
            } else {
                Direction::South
            };
            ActionCommand::Move(dir)
        })
        .collect()
}
