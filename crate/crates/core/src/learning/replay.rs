//! Episode-granular replay. Recurrent training needs whole sequences, so the
//! buffer stores complete episodes and samples them without replacement.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::DependencyMatrix;
use crate::forest::LeaderFollowerForest;

/// One environment step as stored for training.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub avail: Vec<Vec<bool>>,
    /// Joint action executed this step.
    pub actions: Vec<usize>,
    /// Initial (zero-message) intentions this step.
    pub intentions: Vec<usize>,
    /// Previous joint action, `None` entries at episode start.
    pub prev_actions: Vec<Option<usize>>,
    pub forest: LeaderFollowerForest,
    /// Behaviour dependency matrix; absent under pre-defined topologies.
    pub dependency: Option<DependencyMatrix>,
    pub reward: f64,
    pub terminal: bool,
    pub conf_post: Vec<f64>,
    pub conf_zero: Vec<f64>,
    /// Bias value V(s, forest) at rollout time, detached.
    pub v_bias: f64,
    pub r_int: f64,
    pub r_comm: f64,
}

pub type Episode = Vec<Transition>;

/// FIFO ring of complete episodes.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            episodes: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn push(&mut self, episode: Episode) {
        assert!(!episode.is_empty(), "only whole episodes are stored");
        assert!(
            episode.last().unwrap().terminal,
            "episodes must end terminal"
        );
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Uniform sample of `k` distinct episodes.
    pub fn sample(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<&Episode> {
        assert!(k <= self.episodes.len(), "buffer underfilled");
        let mut idx: Vec<usize> = (0..self.episodes.len()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..k].iter().map(|&i| &self.episodes[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dummy_episode(tag: f64, len: usize) -> Episode {
        (0..len)
            .map(|t| Transition {
                obs: vec![vec![tag]],
                state: vec![tag],
                avail: vec![vec![true]],
                actions: vec![0],
                intentions: vec![0],
                prev_actions: vec![None],
                forest: LeaderFollowerForest::edgeless(1),
                dependency: None,
                reward: tag,
                terminal: t + 1 == len,
                conf_post: vec![0.0],
                conf_zero: vec![0.0],
                v_bias: 0.0,
                r_int: 0.0,
                r_comm: 0.0,
            })
            .collect()
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(dummy_episode(i as f64, 2));
        }
        assert_eq!(buf.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tags: Vec<f64> = buf.sample(3, &mut rng).iter().map(|e| e[0].reward).collect();
        for t in tags {
            assert!(t >= 2.0, "oldest episodes evicted first");
        }
    }

    #[test]
    fn sample_returns_distinct_episodes() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(dummy_episode(i as f64, 1));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = buf.sample(10, &mut rng);
        let mut tags: Vec<i64> = sample.iter().map(|e| e[0].reward as i64).collect();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), 10);
    }

    #[test]
    #[should_panic]
    fn incomplete_episode_rejected() {
        let mut buf = ReplayBuffer::new(2);
        let mut ep = dummy_episode(0.0, 3);
        ep.last_mut().unwrap().terminal = false;
        buf.push(ep);
    }
}
