//! Experiment runner: configuration, sharing-pattern baselines, metrics,
//! the training loop, and greedy evaluation.

pub mod config;
pub mod metrics;
pub mod pattern;
pub mod runner;

pub use config::{EnvChoice, ExperimentConfig, SharingPattern};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, CSV_HEADER};
pub use pattern::{deceive_rate, line_forest, random_forest};
pub use runner::{
    build_learner, eval_greedy, load_learner, play_episode, run, save_checkpoint, trace_episode,
    EpisodeStats, EvalResult, RunOutput,
};
