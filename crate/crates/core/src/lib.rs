//! Simulation stack for whole-body humanoid teleoperation.
//!
//! The crate covers the robot description, policy observations, a surrogate
//! plant with a PD joint law, the locomotion reward suite, the upper-body pose
//! curriculum, mirror symmetry, domain randomization, cockpit signal mappings
//! and wire protocol, and a session gateway with recording and replay.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cockpit;
pub mod controller;
pub mod curriculum;
pub mod domain_rand;
pub mod error;
pub mod gateway;
pub mod golden;
pub mod harness;
pub mod kinematics;
pub mod observation;
pub mod plant;
pub mod protocol;
pub mod reward;
pub mod robot;
pub mod stats;
pub mod symmetry;
pub mod transport;

pub use error::{Error, Result};
pub use observation::{assemble_frame, net_shape, Command, NetShape, ObservationFrame, ObservationStack, RobotState};
pub use plant::{pd_torque, ActionCommand, Plant, PlantConfig, SurrogatePlant, TorqueLaw};
pub use robot::{load_preset, load_robot, JointSpec, RobotDescription};
