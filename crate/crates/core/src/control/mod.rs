//! Players' brought-in capability: scalar feedback sub-policies for the
//! analysis track and the obstacle-avoidance MPC for the simulation track.

pub mod delay;
pub mod envelope;
pub mod feedback;
pub mod mpc;
pub mod qp;

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::Result;

pub use delay::{DelayBuffer, DelayedPolicy};
pub use envelope::{build_envelope, EnvelopeConstraint, EnvelopeGeometry, EnvelopeRow, ObstacleSpec, RoadSpec, SafetyMargins};
pub use feedback::{delayed_effective_gamma, design_gain, feedback_policy, mode_table, DelayedMode, FeedbackGains, ModeTable, Variant};
pub use mpc::{mpc_solve, MpcController, MpcProblem, MpcSolution};

/// A state-feedback control policy.
pub trait Policy {
    fn command(&mut self, observed: &VehicleState) -> Result<ControlInput>;
}
