//! Partially observable predator-prey gridworld.
//!
//! Predators move on a rectangular grid and try to remove prey. A prey is
//! caught when at least two predators in its 4-neighbourhood choose `catch`
//! in the same step (+`catch_reward` each prey); every catch action not
//! adjacent to any caught prey is a miscoordination and adds the penalty.
//! Prey then move uniformly at random to a free neighbouring cell or stay.
//! Each predator observes a square window of one-hot predator/prey planes
//! centred on itself plus its own normalized coordinates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};

pub const ACT_UP: usize = 0;
pub const ACT_DOWN: usize = 1;
pub const ACT_LEFT: usize = 2;
pub const ACT_RIGHT: usize = 3;
pub const ACT_STAY: usize = 4;
pub const ACT_CATCH: usize = 5;
pub const N_ACTIONS: usize = 6;

#[derive(Debug, Clone)]
pub struct PredatorPreyConfig {
    pub width: usize,
    pub height: usize,
    pub n_predators: usize,
    pub n_prey: usize,
    /// Odd observation window edge length.
    pub window: usize,
    /// Miscoordination penalty, at most zero.
    pub penalty: f64,
    pub catch_reward: f64,
    pub step_cap: usize,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        PredatorPreyConfig {
            width: 10,
            height: 10,
            n_predators: 8,
            n_prey: 8,
            window: 5,
            penalty: 0.0,
            catch_reward: 10.0,
            step_cap: 200,
        }
    }
}

impl PredatorPreyConfig {
    fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Env("window must be odd".to_string()));
        }
        if self.penalty > 0.0 {
            return Err(Error::Env("penalty must be <= 0".to_string()));
        }
        if self.width * self.height < self.n_predators + self.n_prey {
            return Err(Error::Env(format!(
                "{}x{} grid cannot hold {} entities",
                self.width,
                self.height,
                self.n_predators + self.n_prey
            )));
        }
        if self.n_predators == 0 {
            return Err(Error::Env("need at least one predator".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PredatorPrey {
    cfg: PredatorPreyConfig,
    predators: Vec<(usize, usize)>,
    prey: Vec<(usize, usize)>,
    prey_alive: Vec<bool>,
    steps: usize,
    done: bool,
}

impl PredatorPrey {
    pub fn new(cfg: PredatorPreyConfig) -> Result<Self> {
        cfg.validate()?;
        let n_predators = cfg.n_predators;
        let n_prey = cfg.n_prey;
        Ok(PredatorPrey {
            cfg,
            predators: vec![(0, 0); n_predators],
            prey: vec![(0, 0); n_prey],
            prey_alive: vec![false; n_prey],
            steps: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.cfg
    }

    pub fn prey_alive_count(&self) -> usize {
        self.prey_alive.iter().filter(|&&a| a).count()
    }

    pub fn predator_positions(&self) -> &[(usize, usize)] {
        &self.predators
    }

    pub fn prey_positions(&self) -> &[(usize, usize)] {
        &self.prey
    }

    /// Test hook: place entities directly.
    pub fn set_positions(
        &mut self,
        predators: Vec<(usize, usize)>,
        prey: Vec<(usize, usize)>,
    ) {
        assert_eq!(predators.len(), self.cfg.n_predators);
        assert_eq!(prey.len(), self.cfg.n_prey);
        self.predators = predators;
        self.prey_alive = vec![true; prey.len()];
        self.prey = prey;
        self.steps = 0;
        self.done = false;
    }

    fn occupied(&self, cell: (usize, usize)) -> bool {
        self.predators.iter().any(|&p| p == cell)
            || self
                .prey
                .iter()
                .zip(&self.prey_alive)
                .any(|(&p, &alive)| alive && p == cell)
    }

    fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.cfg.width && (y as usize) < self.cfg.height
    }

    fn adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
        let dx = a.0 as isize - b.0 as isize;
        let dy = a.1 as isize - b.1 as isize;
        dx.abs() + dy.abs() == 1
    }

    fn norm(&self, v: usize, extent: usize) -> f64 {
        if extent <= 1 {
            0.0
        } else {
            v as f64 / (extent - 1) as f64
        }
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let w = self.cfg.window;
        let half = (w / 2) as isize;
        let (ax, ay) = self.predators[agent];
        let mut obs = vec![0.0; 2 * w * w + 2];
        let mark = |plane: usize, pos: (usize, usize), obs: &mut Vec<f64>| {
            let dx = pos.0 as isize - ax as isize + half;
            let dy = pos.1 as isize - ay as isize + half;
            if dx >= 0 && dy >= 0 && dx < w as isize && dy < w as isize {
                obs[plane * w * w + dy as usize * w + dx as usize] = 1.0;
            }
        };
        for &p in &self.predators {
            mark(0, p, &mut obs);
        }
        for (p, alive) in self.prey.iter().zip(&self.prey_alive) {
            if *alive {
                mark(1, *p, &mut obs);
            }
        }
        obs[2 * w * w] = self.norm(ax, self.cfg.width);
        obs[2 * w * w + 1] = self.norm(ay, self.cfg.height);
        obs
    }
}

impl Environment for PredatorPrey {
    fn n_agents(&self) -> usize {
        self.cfg.n_predators
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn obs_dim(&self) -> usize {
        2 * self.cfg.window * self.cfg.window + 2
    }

    fn state_dim(&self) -> usize {
        3 * (self.cfg.n_predators + self.cfg.n_prey)
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let place = |rng: &mut ChaCha8Rng, taken: &mut Vec<(usize, usize)>| {
            loop {
                let cell = (
                    rng.gen_range(0..self.cfg.width),
                    rng.gen_range(0..self.cfg.height),
                );
                if !taken.contains(&cell) {
                    taken.push(cell);
                    return cell;
                }
            }
        };
        for i in 0..self.cfg.n_predators {
            self.predators[i] = place(rng, &mut taken);
        }
        for i in 0..self.cfg.n_prey {
            self.prey[i] = place(rng, &mut taken);
        }
        self.prey_alive = vec![true; self.cfg.n_prey];
        self.steps = 0;
        self.done = false;
        Ok(())
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_predators).map(|i| self.observe(i)).collect()
    }

    fn global_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.state_dim());
        for &(x, y) in &self.predators {
            s.push(self.norm(x, self.cfg.width));
            s.push(self.norm(y, self.cfg.height));
            s.push(1.0);
        }
        // Dead prey keep frozen coordinates with a zero flag so the state
        // dimension is constant across the episode.
        for (&(x, y), &alive) in self.prey.iter().zip(&self.prey_alive) {
            s.push(self.norm(x, self.cfg.width));
            s.push(self.norm(y, self.cfg.height));
            s.push(if alive { 1.0 } else { 0.0 });
        }
        s
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; N_ACTIONS]; self.cfg.n_predators]
    }

    fn step(&mut self, actions: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, bool)> {
        if self.done {
            return Err(Error::Env("step on a finished episode".to_string()));
        }
        if actions.len() != self.cfg.n_predators {
            return Err(Error::Env(format!(
                "expected {} actions, got {}",
                self.cfg.n_predators,
                actions.len()
            )));
        }
        for &a in actions {
            if a >= N_ACTIONS {
                return Err(Error::Env(format!("action {a} out of range")));
            }
        }

        // Movement in index order; earlier movers block later ones.
        for (i, &a) in actions.iter().enumerate() {
            let delta = match a {
                ACT_UP => (0isize, -1isize),
                ACT_DOWN => (0, 1),
                ACT_LEFT => (-1, 0),
                ACT_RIGHT => (1, 0),
                _ => continue,
            };
            let (x, y) = self.predators[i];
            let (tx, ty) = (x as isize + delta.0, y as isize + delta.1);
            if self.in_bounds(tx, ty) && !self.occupied((tx as usize, ty as usize)) {
                self.predators[i] = (tx as usize, ty as usize);
            }
        }

        // Catch resolution: a prey with two or more adjacent catchers is
        // removed; a catcher adjacent to no removed prey is unpaired.
        let catchers: Vec<usize> = (0..actions.len())
            .filter(|&i| actions[i] == ACT_CATCH)
            .collect();
        let mut caught: Vec<usize> = Vec::new();
        for p in 0..self.prey.len() {
            if !self.prey_alive[p] {
                continue;
            }
            let adj = catchers
                .iter()
                .filter(|&&c| Self::adjacent(self.predators[c], self.prey[p]))
                .count();
            if adj >= 2 {
                caught.push(p);
            }
        }
        let mut unpaired = 0usize;
        for &c in &catchers {
            let paired = caught
                .iter()
                .any(|&p| Self::adjacent(self.predators[c], self.prey[p]));
            if !paired {
                unpaired += 1;
            }
        }
        for &p in &caught {
            self.prey_alive[p] = false;
        }
        let reward =
            self.cfg.catch_reward * caught.len() as f64 + self.cfg.penalty * unpaired as f64;

        // Prey move uniformly at random to a free neighbouring cell or stay.
        for p in 0..self.prey.len() {
            if !self.prey_alive[p] {
                continue;
            }
            let (x, y) = self.prey[p];
            let mut options = vec![(x, y)];
            for (dx, dy) in [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)] {
                let (tx, ty) = (x as isize + dx, y as isize + dy);
                if self.in_bounds(tx, ty) && !self.occupied((tx as usize, ty as usize)) {
                    options.push((tx as usize, ty as usize));
                }
            }
            self.prey[p] = options[rng.gen_range(0..options.len())];
        }

        self.steps += 1;
        self.done = self.prey_alive_count() == 0 || self.steps >= self.cfg.step_cap;
        Ok((reward, self.done))
    }

    fn render_ascii(&self) -> String {
        let mut grid = vec![vec!['.'; self.cfg.width]; self.cfg.height];
        for (p, alive) in self.prey.iter().zip(&self.prey_alive) {
            if *alive {
                grid[p.1][p.0] = 'x';
            }
        }
        for &p in &self.predators {
            grid[p.1][p.0] = 'P';
        }
        let mut out = String::new();
        for row in grid {
            out.extend(row);
            out.push('\n');
        }
        out
    }
}
