//! Reinforcement-learning sequential feature selection.
//!
//! An agent examines one feature of a sample at a time, paying a small cost
//! per feature, and ends each episode with a class prediction. The policy is
//! a dueling double deep Q-network trained from scratch; [`intel`] scores the
//! learned selection behaviour.

pub mod dataio;
pub mod error;
pub mod mdp;
pub mod agent;
pub mod checkpoint;
pub mod cli;
pub mod intel;
pub mod metrics;
pub mod qnet;

pub use error::{Error, Result};
