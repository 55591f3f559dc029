//! Influence-map multi-agent actor-critic laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: a deterministic turn-based combat micro-simulator with
//!   marine / stalker / zealot scenarios, local observations, legal-action
//!   masks, a scripted opponent and a shared team reward capped at 20.
//! - [`influence`]: per-unit influence maps and their signed aggregate, the
//!   global spatial channel every agent sees.
//! - [`neural`]: dense and convolutional layers with hand-written backward
//!   passes, the dense-block actor/critic networks, optimizers, checkpoints
//!   and a finite-difference gradient checker.
//! - [`marl`]: the shared-parameter advantage actor-critic trainer with
//!   ε-soft exploration and episodic Monte-Carlo updates.
//! - [`harness`]: multi-seed campaigns, CSV metrics, summary statistics,
//!   method comparison and replay rendering.

pub mod engine;
pub mod error;
pub mod harness;
pub mod influence;
pub mod marl;
pub mod neural;

pub use engine::{
    ActionCommand, Direction, Observation, ScenarioSpec, StepOutcome, Team, UnitKind, UnitState,
    UnitTypeSpec, WorldState,
};
pub use error::{Error, Result};
pub use harness::{MetricsRecord, RunConfig, SummaryStats};
pub use influence::{AimParams, Falloff, InfluenceGrid, InfluenceSource};
pub use marl::{Architecture, EpsilonSchedule, TrainerConfig};
pub use neural::{NetworkSpec, Parameters, Tensor};
