//! Leader-follower forests: generation from a dependency matrix, flow
//! values, topological/ancestor queries, and depth-bounded reconstruction.
//!
//! All tie-breaks (flow-value ties, candidate ties, leader ties) go to the
//! lowest agent index so runs are reproducible.

use crate::attention::DependencyMatrix;
use crate::error::{Error, Result};

/// A directed rooted forest over agents, stored as a parent array. Levels,
/// roots, and the (level, index) topological order are derived on
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderFollowerForest {
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    order: Vec<usize>,
}

impl LeaderFollowerForest {
    /// Validates the parent array (no self-loops, no cycles) and derives
    /// levels and the topological order.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::InvalidForest("empty forest".to_string()));
        }
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                if *p == i {
                    return Err(Error::InvalidForest(format!("self-loop at {i}")));
                }
                if *p >= n {
                    return Err(Error::InvalidForest(format!("parent {p} out of range")));
                }
            }
        }
        // Levels by memoized walk; a walk longer than n nodes is a cycle.
        let mut level = vec![usize::MAX; n];
        for start in 0..n {
            if level[start] != usize::MAX {
                continue;
            }
            let mut path = vec![start];
            let mut cur = start;
            loop {
                match parent[cur] {
                    None => {
                        level[cur] = 0;
                        break;
                    }
                    Some(p) if level[p] != usize::MAX => {
                        level[cur] = level[p] + 1;
                        break;
                    }
                    Some(p) => {
                        if path.len() > n {
                            return Err(Error::InvalidForest(format!(
                                "cycle through agent {start}"
                            )));
                        }
                        path.push(p);
                        cur = p;
                    }
                }
            }
            for &node in path.iter().rev().skip(1) {
                level[node] = level[parent[node].unwrap()] + 1;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (level[i], i));
        Ok(LeaderFollowerForest {
            parent,
            level,
            order,
        })
    }

    pub fn edgeless(n: usize) -> Self {
        LeaderFollowerForest {
            parent: vec![None; n],
            level: vec![0; n],
            order: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn level(&self, i: usize) -> usize {
        self.level[i]
    }

    pub fn max_level(&self) -> usize {
        self.level.iter().copied().max().unwrap_or(0)
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| self.parent[i].is_none())
    }

    pub fn tree_count(&self) -> usize {
        self.roots().count()
    }

    pub fn edge_count(&self) -> usize {
        self.n() - self.tree_count()
    }

    /// Every node appears after its parent; ordered by (level, index).
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Nodes on the path from `i`'s root down to `i`, excluding `i` itself.
    /// Empty for roots.
    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Flattened n x n indicator with `m[child][parent] = 1`.
    pub fn parent_indicator(&self) -> Vec<f64> {
        let n = self.n();
        let mut m = vec![0.0; n * n];
        for (child, p) in self.parent.iter().enumerate() {
            if let Some(parent) = p {
                m[child * n + parent] = 1.0;
            }
        }
        m
    }

    /// Debug dump: one `root:i` line per root and one `child<-parent` line
    /// per edge, zero-indexed, in agent order.
    pub fn debug_lines(&self) -> Vec<String> {
        (0..self.n())
            .map(|i| match self.parent[i] {
                None => format!("root:{i}"),
                Some(p) => format!("{i}<-{p}"),
            })
            .collect()
    }
}

/// Per-agent difference between ingoing and outgoing dependency flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowValues(pub Vec<f64>);

/// `rho_i = (column sum i) - (row sum i)`; with row-stochastic input this is
/// `colsum_i - 1` and the values sum to zero.
pub fn flow_values(w: &DependencyMatrix) -> FlowValues {
    let n = w.n();
    let mut rho = vec![0.0; n];
    for i in 0..n {
        let ingoing: f64 = (0..n).map(|v| w.get(v, i)).sum();
        let outgoing: f64 = w.row(i).iter().sum();
        rho[i] = ingoing - outgoing;
    }
    FlowValues(rho)
}

fn argmax_rho(rho: &[f64], eligible: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in rho.iter().enumerate() {
        if !eligible(i) {
            continue;
        }
        if best.map_or(true, |(bv, _)| v > bv) {
            best = Some((v, i));
        }
    }
    best.expect("at least one eligible agent").1
}

/// Forest generation. Seeds the root set with the highest-flow agent (or the
/// top-k agents when `topk` is given), then repeatedly picks the outside
/// agent with the strongest edge into the placed set. Without `topk` the
/// candidate is accepted only if that edge ties its maximum outgoing weight;
/// otherwise it is rejected and the highest-flow remaining agent becomes a
/// new root. With `topk` every candidate is accepted.
pub fn generate(w: &DependencyMatrix, topk: Option<usize>) -> Result<LeaderFollowerForest> {
    let n = w.n();
    if let Some(k) = topk {
        if k < 1 || k > n {
            return Err(Error::InvalidForest(format!("topk {k} out of range 1..={n}")));
        }
    }
    let rho = flow_values(w).0;
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut placed = vec![false; n];
    let mut placed_count = 0;

    match topk {
        Some(k) => {
            // Top-k by flow value, ties to the lowest index.
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| rho[b].partial_cmp(&rho[a]).unwrap().then(a.cmp(&b)));
            for &r in idx.iter().take(k) {
                placed[r] = true;
                placed_count += 1;
            }
        }
        None => {
            let r = argmax_rho(&rho, |_| true);
            placed[r] = true;
            placed_count += 1;
        }
    }

    let initial_roots = placed_count;
    let mut iterations = 0;
    while placed_count < n {
        iterations += 1;
        // Strongest edge from outside into the placed set; ties prefer the
        // lowest candidate index, then the lowest leader index.
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if placed[i] {
                continue;
            }
            for j in 0..n {
                if !placed[j] || j == i {
                    continue;
                }
                let wij = w.get(i, j);
                if best.map_or(true, |(bw, _, _)| wij > bw) {
                    best = Some((wij, i, j));
                }
            }
        }
        let (wij, i, j) = best.expect("placed set and complement are non-empty");
        match topk {
            Some(_) => {
                parent[i] = Some(j);
                placed[i] = true;
                placed_count += 1;
            }
            None => {
                let wmax = w.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if wij == wmax {
                    parent[i] = Some(j);
                    placed[i] = true;
                    placed_count += 1;
                } else {
                    let r = argmax_rho(&rho, |a| !placed[a]);
                    placed[r] = true;
                    placed_count += 1;
                }
            }
        }
    }
    debug_assert_eq!(iterations, n - initial_roots);
    LeaderFollowerForest::from_parents(parent)
}

/// Depth-bounded reconstruction: nodes at level >= `d` are detached and
/// re-parented to their strongest dependency among nodes whose original
/// level is at most `d - 2` (ties to the lowest index); with `d = 1` they
/// become roots. Shallow nodes keep their parents, so the result has all
/// levels <= `d - 1` and the operation is idempotent.
pub fn depth_bound(
    f: &LeaderFollowerForest,
    w: &DependencyMatrix,
    d: usize,
) -> LeaderFollowerForest {
    assert!(d >= 1, "depth boundary must be at least 1");
    let n = f.n();
    let candidates: Vec<usize> = (0..n)
        .filter(|&j| d >= 2 && f.level(j) <= d - 2)
        .collect();
    let mut parent = f.parents().to_vec();
    for i in 0..n {
        if f.level(i) < d {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &j in &candidates {
            if j == i {
                continue;
            }
            let wij = w.get(i, j);
            if best.map_or(true, |(bw, _)| wij > bw) {
                best = Some((wij, j));
            }
        }
        parent[i] = best.map(|(_, j)| j);
    }
    LeaderFollowerForest::from_parents(parent).expect("re-parenting into shallow nodes is acyclic")
}
