//! Two-stage training: TD learning of the agent network with linear value
//! decomposition plus a state/forest bias, and deterministic policy
//! gradients on the dependency-matrix policy driven by a communication
//! reward.

pub mod nets;
pub mod replay;
pub mod trainer;

pub use nets::{BiasNetwork, CriticNetwork};
pub use replay::{Episode, ReplayBuffer, Transition};
pub use trainer::{DecideMode, Hyper, Learner, StoreSet, TrainMetrics};

use crate::agent::JointDecision;

/// Sum over agents of the confidence improvement brought by communication;
/// may be negative.
pub fn intrinsic_reward_parts(conf_post: &[f64], conf_zero: &[f64]) -> f64 {
    conf_post
        .iter()
        .zip(conf_zero)
        .map(|(p, z)| p - z)
        .sum()
}

pub fn intrinsic_reward(decision: &JointDecision) -> f64 {
    intrinsic_reward_parts(&decision.conf_post, &decision.conf_zero)
}

/// Communication reward for the forest policy: the detached bias value plus
/// the scaled intrinsic reward.
pub fn communication_reward(v: f64, r_int: f64, intrinsic_coef: f64) -> f64 {
    v + intrinsic_coef * r_int
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsic_reward_zero_for_unchanged_confidence() {
        assert_eq!(intrinsic_reward_parts(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn intrinsic_reward_sums_per_agent_gains() {
        // Messages raise the gap by 0.5 for two of four agents.
        let zero = [0.2, 0.4, 0.1, 0.3];
        let post = [0.7, 0.4, 0.6, 0.3];
        assert!((intrinsic_reward_parts(&post, &zero) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intrinsic_reward_symmetric_agents_scale_linearly() {
        let n = 6;
        let zero = vec![0.25; n];
        let post = vec![0.45; n];
        let r = intrinsic_reward_parts(&post, &zero);
        assert!((r - n as f64 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn communication_reward_cases() {
        assert_eq!(communication_reward(2.0, 0.0, 0.1), 2.0);
        assert_eq!(communication_reward(0.0, 1.0, 0.1), 0.1);
        // Coefficient zero is the ablation switch.
        assert_eq!(communication_reward(1.5, 99.0, 0.0), 1.5);
    }
}
