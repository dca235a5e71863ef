//! One-sided intention sharing for cooperative multi-agent reinforcement
//! learning.
//!
//! Agents build an observation-dependent leader-follower forest from a
//! learned dependency matrix; action intentions flow only from leaders to
//! followers, so a transmitted intention always equals the sender's executed
//! action. The forest policy is trained with deterministic policy gradients
//! against a learned critic, while the agent network trains with linear
//! value decomposition plus a state/forest-conditioned bias.

pub mod agent;
pub mod attention;
pub mod diffnet;
pub mod envs;
pub mod error;
pub mod forest;
pub mod learning;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
