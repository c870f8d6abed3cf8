//! Euler-Lagrange plant: dynamics, disturbances, integration, reference
//! trajectories and residual logging.

pub mod dataset;
mod disturbance;
mod integrate;
mod model;
mod payload;
mod trajectory;

pub use dataset::{compute_residual, ResidualSample, Trajectory};
pub use disturbance::{disturbance, DisturbanceState};
pub use integrate::{step, GeneralizedState, ResidualTerms, Simulator};
pub use model::{DisturbanceParams, Link, PlantModel, N_BASE};
pub use payload::PayloadSchedule;
pub use trajectory::{
    Desired, ReferenceTrajectory, TrajectoryKind, PICK_HEIGHT, PLACE_HEIGHT, Q1_RANGE, Q2_RANGE,
};
