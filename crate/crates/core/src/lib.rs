//! Shared-control game laboratory.
//!
//! A crowd of agents with heterogeneous information delays and social powers
//! jointly drives one simulated car, each agent choosing per role period
//! whether to command throttle or steering. The crate provides the car plant
//! and its MPC, the Markov-jump stability analysis that predicts which
//! populations can match a single undelayed expert, the communication
//! graphs, the consensus actor-critic role learner, and the episode/training
//! orchestration.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod marl;
pub mod mjls;
pub mod persist;
pub mod rng;
pub mod scg;

pub use error::{Result, ScgError};
