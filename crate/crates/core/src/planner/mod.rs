//! Attitude-aware search over a planar position × yaw lattice.

mod astar;
mod attitude;
mod env;

pub use astar::{
    astar_plan, footprint_collision_check, footprint_points, DiscreteSequence, PlannerConfig,
    SE3Node,
};
pub use attitude::{
    attitude_objective, optimal_attitude, optimal_attitude_with_step, tau_pm_max, wrap_angle,
    wrapped_yaw_distance, yaw_symmetry_period, AttitudeObjectiveSpec, C_TAU,
};
pub use env::Environment;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("map: {0}")]
    Map(String),
    #[error("invalid attitude objective: {0}")]
    Spec(String),
    #[error("no functional rotor left")]
    NoFunctionalRotor,
    #[error("{0} state is in collision")]
    BlockedEndpoint(&'static str),
    #[error("open set exhausted after {0} expansions")]
    NoPath(usize),
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error(transparent)]
    Fault(#[from] crate::fault::FaultError),
}
