//! One-step cooperative matrix games for two agents: both receive the same
//! payoff entry for their joint action and the episode ends immediately.

use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MatrixGame {
    n_actions: usize,
    /// Row-major payoff, indexed by (agent 0 action, agent 1 action).
    payoff: Vec<f64>,
    done: bool,
}

impl MatrixGame {
    pub fn new(n_actions: usize, payoff: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || payoff.len() != n_actions * n_actions {
            return Err(Error::Env(format!(
                "payoff must be {n_actions}x{n_actions}, got {} entries",
                payoff.len()
            )));
        }
        if payoff.iter().any(|p| !p.is_finite()) {
            return Err(Error::Env("payoff entries must be finite".to_string()));
        }
        Ok(MatrixGame {
            n_actions,
            payoff,
            done: false,
        })
    }

    /// The crossroad game: waiting while the other moves pays well, a joint
    /// move collides.
    pub fn crossroad() -> Self {
        MatrixGame::new(2, vec![0.0, 8.0, 8.0, -10.0]).unwrap()
    }

    pub fn payoff(&self, a0: usize, a1: usize) -> f64 {
        self.payoff[a0 * self.n_actions + a1]
    }

    /// Exhaustive enumeration of the best joint payoff.
    pub fn optimal_payoff(&self) -> f64 {
        self.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Parses rows separated by `;`, entries by `,`: `"0,8;8,-10"`.
    pub fn parse_payoff(text: &str) -> Result<(usize, Vec<f64>)> {
        let rows: Vec<&str> = text.split(';').collect();
        let n = rows.len();
        let mut payoff = Vec::with_capacity(n * n);
        for row in rows {
            let entries: Vec<&str> = row.split(',').collect();
            if entries.len() != n {
                return Err(Error::Env(format!(
                    "payoff row `{row}` has {} entries, expected {n}",
                    entries.len()
                )));
            }
            for e in entries {
                payoff.push(
                    e.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Env(format!("bad payoff entry `{e}`")))?,
                );
            }
        }
        Ok((n, payoff))
    }
}

impl Environment for MatrixGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Result<()> {
        self.done = false;
        Ok(())
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0], vec![0.0]]
    }

    fn global_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.n_actions]; 2]
    }

    fn step(&mut self, actions: &[usize], _rng: &mut ChaCha8Rng) -> Result<(f64, bool)> {
        if actions.len() != 2 {
            return Err(Error::Env(format!("expected 2 actions, got {}", actions.len())));
        }
        for &a in actions {
            if a >= self.n_actions {
                return Err(Error::Env(format!(
                    "action {a} out of range 0..{}",
                    self.n_actions
                )));
            }
        }
        self.done = true;
        Ok((self.payoff(actions[0], actions[1]), true))
    }

    fn render_ascii(&self) -> String {
        format!("matrix game, {0}x{0} payoff\n", self.n_actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn crossroad_joint_move_collides() {
        let mut g = MatrixGame::crossroad();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (r, done) = g.step(&[1, 1], &mut rng).unwrap();
        assert_eq!(r, -10.0);
        assert!(done);
    }

    #[test]
    fn crossroad_wait_move_is_optimal() {
        let mut g = MatrixGame::crossroad();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (r, _) = g.step(&[0, 1], &mut rng).unwrap();
        assert_eq!(r, 8.0);
        // Enumeration oracle over all four joint actions.
        let best = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| g.payoff(a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, 8.0);
        assert_eq!(g.optimal_payoff(), 8.0);
    }

    #[test]
    fn identity_payoff_rewards_matching() {
        let mut g = MatrixGame::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.step(&[0, 0], &mut rng).unwrap().0, 1.0);
        g.reset(&mut rng).unwrap();
        assert_eq!(g.step(&[1, 1], &mut rng).unwrap().0, 1.0);
        g.reset(&mut rng).unwrap();
        assert_eq!(g.step(&[0, 1], &mut rng).unwrap().0, 0.0);
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        let mut g = MatrixGame::crossroad();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.step(&[0, 2], &mut rng).is_err());
    }

    #[test]
    fn payoff_parsing_round_trip() {
        let (n, p) = MatrixGame::parse_payoff("0,8;8,-10").unwrap();
        assert_eq!(n, 2);
        assert_eq!(p, vec![0.0, 8.0, 8.0, -10.0]);
        assert!(MatrixGame::parse_payoff("1,2;3").is_err());
        assert!(MatrixGame::parse_payoff("1,x;3,4").is_err());
    }
}
