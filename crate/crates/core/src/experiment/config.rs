//! Flat key=value experiment configuration with command-line overrides.

use std::fmt;
use std::path::Path;

use crate::envs::{Environment, MatrixGame, PredatorPrey, PredatorPreyConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvChoice {
    Matrix,
    PredatorPrey,
}

impl EnvChoice {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "matrix" => Ok(EnvChoice::Matrix),
            "predator_prey" => Ok(EnvChoice::PredatorPrey),
            other => Err(Error::Config(format!("unknown env `{other}`"))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            EnvChoice::Matrix => "matrix",
            EnvChoice::PredatorPrey => "predator_prey",
        }
    }
}

/// Which intention-sharing pattern the run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharingPattern {
    /// Learned leader-follower forest.
    Lff,
    /// No sharing.
    Ns,
    /// Full sharing with simultaneous re-decision.
    Fs,
    /// Fixed chain.
    Line,
    /// Fresh uniformly random tree each step.
    Random,
}

impl SharingPattern {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lff" => Ok(SharingPattern::Lff),
            "ns" => Ok(SharingPattern::Ns),
            "fs" => Ok(SharingPattern::Fs),
            "line" => Ok(SharingPattern::Line),
            "random" => Ok(SharingPattern::Random),
            other => Err(Error::Config(format!("unknown pattern `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SharingPattern::Lff => "lff",
            SharingPattern::Ns => "ns",
            SharingPattern::Fs => "fs",
            SharingPattern::Line => "line",
            SharingPattern::Random => "random",
        }
    }
}

impl fmt::Display for SharingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    pub pattern: SharingPattern,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: u32,
    /// Number of forest roots under Top(k); zero disables Top(k).
    pub topk: usize,
    pub depth_bound: usize,
    pub gamma: f64,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub buffer_episodes: usize,
    pub batch_episodes: usize,
    pub intrinsic_coef: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub dep_noise_sigma: f64,
    pub target_copy_interval: u64,
    pub train_steps_per_episode: u32,
    /// Checkpoint every this many env steps; zero = final checkpoint only.
    pub checkpoint_interval: u64,
    pub out_dir: String,
    pub mg_payoff: String,
    pub pp_width: usize,
    pub pp_height: usize,
    pub pp_predators: usize,
    pub pp_prey: usize,
    pub pp_window: usize,
    pub pp_penalty: f64,
    pub pp_catch_reward: f64,
    pub pp_step_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvChoice::Matrix,
            pattern: SharingPattern::Lff,
            seed: 0,
            total_steps: 20_000,
            eval_interval: 1_000,
            eval_episodes: 10,
            topk: 0,
            depth_bound: 3,
            gamma: 0.99,
            lr: 5e-4,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-5,
            buffer_episodes: 5_000,
            batch_episodes: 32,
            intrinsic_coef: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            dep_noise_sigma: 0.1,
            target_copy_interval: 200,
            train_steps_per_episode: 1,
            checkpoint_interval: 0,
            out_dir: "runs".to_string(),
            mg_payoff: "0,8;8,-10".to_string(),
            pp_width: 10,
            pp_height: 10,
            pp_predators: 8,
            pp_prey: 8,
            pp_window: 5,
            pp_penalty: 0.0,
            pp_catch_reward: 10.0,
            pp_step_cap: 200,
        }
    }
}

macro_rules! config_keys {
    ($self:ident, $key:ident, $value:ident, { $($name:literal => $setter:expr),+ $(,)? }) => {
        match $key {
            $($name => { $setter; Ok(()) }),+,
            other => Err(Error::Config(format!("unknown key `{other}`"))),
        }
    };
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let v = value.trim();
        config_keys!(self, key, v, {
            "env" => self.env = EnvChoice::parse(v)?,
            "pattern" => self.pattern = SharingPattern::parse(v)?,
            "seed" => self.seed = num(key, v)?,
            "total_steps" => self.total_steps = num(key, v)?,
            "eval_interval" => self.eval_interval = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "topk" => self.topk = num(key, v)?,
            "depth_bound" => self.depth_bound = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "rmsprop_decay" => self.rmsprop_decay = num(key, v)?,
            "rmsprop_eps" => self.rmsprop_eps = num(key, v)?,
            "buffer_episodes" => self.buffer_episodes = num(key, v)?,
            "batch_episodes" => self.batch_episodes = num(key, v)?,
            "intrinsic_coef" => self.intrinsic_coef = num(key, v)?,
            "epsilon_start" => self.epsilon_start = num(key, v)?,
            "epsilon_end" => self.epsilon_end = num(key, v)?,
            "epsilon_anneal_steps" => self.epsilon_anneal_steps = num(key, v)?,
            "dep_noise_sigma" => self.dep_noise_sigma = num(key, v)?,
            "target_copy_interval" => self.target_copy_interval = num(key, v)?,
            "train_steps_per_episode" => self.train_steps_per_episode = num(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, v)?,
            "out_dir" => self.out_dir = v.to_string(),
            "mg_payoff" => self.mg_payoff = v.to_string(),
            "pp_width" => self.pp_width = num(key, v)?,
            "pp_height" => self.pp_height = num(key, v)?,
            "pp_predators" => self.pp_predators = num(key, v)?,
            "pp_prey" => self.pp_prey = num(key, v)?,
            "pp_window" => self.pp_window = num(key, v)?,
            "pp_penalty" => self.pp_penalty = num(key, v)?,
            "pp_catch_reward" => self.pp_catch_reward = num(key, v)?,
            "pp_step_cap" => self.pp_step_cap = num(key, v)?,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("env", self.env.name().to_string());
        kv("pattern", self.pattern.name().to_string());
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("topk", self.topk.to_string());
        kv("depth_bound", self.depth_bound.to_string());
        kv("gamma", format!("{:?}", self.gamma));
        kv("lr", format!("{:?}", self.lr));
        kv("rmsprop_decay", format!("{:?}", self.rmsprop_decay));
        kv("rmsprop_eps", format!("{:?}", self.rmsprop_eps));
        kv("buffer_episodes", self.buffer_episodes.to_string());
        kv("batch_episodes", self.batch_episodes.to_string());
        kv("intrinsic_coef", format!("{:?}", self.intrinsic_coef));
        kv("epsilon_start", format!("{:?}", self.epsilon_start));
        kv("epsilon_end", format!("{:?}", self.epsilon_end));
        kv("epsilon_anneal_steps", self.epsilon_anneal_steps.to_string());
        kv("dep_noise_sigma", format!("{:?}", self.dep_noise_sigma));
        kv("target_copy_interval", self.target_copy_interval.to_string());
        kv(
            "train_steps_per_episode",
            self.train_steps_per_episode.to_string(),
        );
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("out_dir", self.out_dir.clone());
        kv("mg_payoff", self.mg_payoff.clone());
        kv("pp_width", self.pp_width.to_string());
        kv("pp_height", self.pp_height.to_string());
        kv("pp_predators", self.pp_predators.to_string());
        kv("pp_prey", self.pp_prey.to_string());
        kv("pp_window", self.pp_window.to_string());
        kv("pp_penalty", format!("{:?}", self.pp_penalty));
        kv("pp_catch_reward", format!("{:?}", self.pp_catch_reward));
        kv("pp_step_cap", self.pp_step_cap.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_bound < 1 {
            return Err(Error::Config("depth_bound must be >= 1".into()));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::Config(
                "epsilon_end must not exceed epsilon_start".into(),
            ));
        }
        let n = self.n_agents()?;
        if self.topk > n {
            return Err(Error::Config(format!(
                "topk {} exceeds agent count {n}",
                self.topk
            )));
        }
        if self.pp_penalty > 0.0 {
            return Err(Error::Config("pp_penalty must be <= 0".into()));
        }
        if self.batch_episodes == 0 || self.buffer_episodes < self.batch_episodes {
            return Err(Error::Config(
                "buffer_episodes must hold at least one batch".into(),
            ));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> Result<usize> {
        Ok(match self.env {
            EnvChoice::Matrix => 2,
            EnvChoice::PredatorPrey => self.pp_predators,
        })
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        match self.env {
            EnvChoice::Matrix => {
                let (n, payoff) = MatrixGame::parse_payoff(&self.mg_payoff)?;
                Ok(Box::new(MatrixGame::new(n, payoff)?))
            }
            EnvChoice::PredatorPrey => Ok(Box::new(PredatorPrey::new(PredatorPreyConfig {
                width: self.pp_width,
                height: self.pp_height,
                n_predators: self.pp_predators,
                n_prey: self.pp_prey,
                window: self.pp_window,
                penalty: self.pp_penalty,
                catch_reward: self.pp_catch_reward,
                step_cap: self.pp_step_cap,
            })?)),
        }
    }

    /// Linear epsilon anneal by environment steps.
    pub fn epsilon_at(&self, env_steps: u64) -> f64 {
        let frac = if self.epsilon_anneal_steps == 0 {
            1.0
        } else {
            (env_steps as f64 / self.epsilon_anneal_steps as f64).min(1.0)
        };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Dependency-score exploration noise, annealed to zero on the same
    /// horizon as epsilon.
    pub fn noise_sigma_at(&self, env_steps: u64) -> f64 {
        let frac = if self.epsilon_anneal_steps == 0 {
            1.0
        } else {
            (env_steps as f64 / self.epsilon_anneal_steps as f64).min(1.0)
        };
        self.dep_noise_sigma * (1.0 - frac)
    }
}
