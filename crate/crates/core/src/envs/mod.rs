//! Desk-scale cooperative environments: one-step matrix games and the
//! partially observable predator-prey gridworld.

pub mod matrix;
pub mod predator_prey;

pub use matrix::MatrixGame;
pub use predator_prey::{PredatorPrey, PredatorPreyConfig};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Shared-reward multi-agent environment with per-agent observations and a
/// centralised-training global state.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()>;
    fn observations(&self) -> Vec<Vec<f64>>;
    fn global_state(&self) -> Vec<f64>;
    fn avail_actions(&self) -> Vec<Vec<bool>>;
    /// Advances one step; returns (global reward, terminal).
    fn step(&mut self, actions: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, bool)>;
    fn render_ascii(&self) -> String;
}
