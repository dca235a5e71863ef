//! Baseline sharing topologies and the deceive-rate measure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::JointDecision;
use crate::error::Result;
use crate::forest::LeaderFollowerForest;

/// Fixed chain 0 <- 1 <- ... <- n-1: agents share intentions one by one.
pub fn line_forest(n: usize) -> LeaderFollowerForest {
    let parents = (0..n).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
    LeaderFollowerForest::from_parents(parents).expect("chain is acyclic")
}

/// A uniformly random single-rooted tree: nodes are placed in a random
/// permutation and each new node picks a parent uniformly among those
/// already placed.
pub fn random_forest(n: usize, rng: &mut ChaCha8Rng) -> LeaderFollowerForest {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut parents = vec![None; n];
    for k in 1..n {
        let parent = perm[rng.gen_range(0..k)];
        parents[perm[k]] = Some(parent);
    }
    LeaderFollowerForest::from_parents(parents).expect("incremental attachment is acyclic")
}

/// Fraction of (agent, step) pairs whose transmitted intention differs from
/// the executed action. Zero by construction for every one-sided pattern.
pub fn deceive_rate(decisions: &[JointDecision]) -> f64 {
    let mut pairs = 0usize;
    let mut mismatches = 0usize;
    for d in decisions {
        for (t, a) in d.transmitted.iter().zip(&d.actions) {
            pairs += 1;
            if t != a {
                mismatches += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        mismatches as f64 / pairs as f64
    }
}

/// Convenience used by property tests: deceive rate from raw pairs.
pub fn deceive_rate_parts(transmitted: &[Vec<usize>], executed: &[Vec<usize>]) -> Result<f64> {
    let mut pairs = 0usize;
    let mut mismatches = 0usize;
    for (ts, us) in transmitted.iter().zip(executed) {
        for (t, u) in ts.iter().zip(us) {
            pairs += 1;
            if t != u {
                mismatches += 1;
            }
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        mismatches as f64 / pairs as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn line_ancestors_accumulate() {
        let f = line_forest(3);
        assert_eq!(f.ancestors(2), vec![0, 1]);
        assert_eq!(f.max_level(), 2);
    }

    #[test]
    fn random_forests_are_single_rooted_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let f = random_forest(8, &mut rng);
            assert_eq!(f.tree_count(), 1);
            assert!(f.max_level() <= 7);
            assert_eq!(f.edge_count(), 7);
        }
    }

    #[test]
    fn random_forest_depth_varies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let depths: std::collections::HashSet<usize> =
            (0..200).map(|_| random_forest(6, &mut rng).max_level()).collect();
        assert!(depths.len() > 1, "sampling should produce varied shapes");
    }

    #[test]
    fn deceive_rate_counts_mismatching_pairs() {
        let r = deceive_rate_parts(
            &[vec![0, 1], vec![1, 1]],
            &[vec![0, 0], vec![1, 1]],
        )
        .unwrap();
        assert!((r - 0.25).abs() < 1e-12);
        assert_eq!(deceive_rate_parts(&[], &[]).unwrap(), 0.0);
    }
}
