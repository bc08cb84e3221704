//! Simulation of highway on-ramp traffic with trained social driver policies.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`map`] models the on-ramp carriageway in arc-length coordinates.
//! * [`sim`] advances all vehicles in lock-step discrete time and records a
//!   [`log::TrajectoryLog`].
//! * [`obs`] encodes the decision grid and the longitudinal control
//!   observation consumed by the learned policies.
//! * [`reward`] implements the car-following and social decision rewards.
//! * [`td3`] is a self-contained actor-critic learner (MLP + backprop).
//! * [`train`] runs the level-k curriculum that produces the policy bundle.
//! * [`sut`] contains the rule-based and game-based deciders under test.
//! * [`eval`] scores a trajectory log for intelligence and complexity.
//! * [`fidelity`] compares simulated behavior against naturalistic tracks.

pub mod eval;
pub mod fidelity;
pub mod log;
pub mod map;
pub mod obs;
pub mod reward;
pub mod sim;
pub mod sut;
pub mod td3;
pub mod train;

pub use log::{LogRow, TrajectoryLog};
pub use map::{DriveSide, Lane, LaneId, RoadMap};
pub use sim::{ControlInput, PolicyTag, SimConfig, VehicleState, World};
