//! Scaled dot-product attention, used twice: to produce the inter-agent
//! dependency matrix from (feature, intention) pairs and to aggregate
//! observation messages into per-agent context vectors.

use crate::diffnet::param::ParamStore;
use crate::diffnet::tape::{dot, Node, Tape};
use crate::error::{Error, Result};

/// Row-stochastic n x n matrix of dependency weights with a zero diagonal.
/// Row `i` holds agent `i`'s attention over the other agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DependencyMatrix {
    /// Validates shape, zero diagonal, row sums within 1e-9 of one, and
    /// entries in [0, 1].
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewAgents);
        }
        if data.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            let mut sum = 0.0;
            for j in 0..n {
                let v = data[i * n + j];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(DependencyMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Query/key projections into a shared `dim`-dimensional space (no bias).
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub query: String,
    pub key: String,
    pub dim: usize,
}

impl AttentionHead {
    pub fn new(prefix: &str, dim: usize) -> Self {
        AttentionHead {
            query: format!("{prefix}.q"),
            key: format!("{prefix}.k"),
            dim,
        }
    }

    pub fn init<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        let limit = 1.0 / (in_dim as f64).sqrt();
        store.add_uniform(&self.query, self.dim, in_dim, limit, rng)?;
        store.add_uniform(&self.key, self.dim, in_dim, limit, rng)
    }
}

/// Dependency matrix rows on the tape plus their point values.
pub struct DependencyOutput {
    pub matrix: DependencyMatrix,
    /// One masked-softmax node per row, for backpropagation into the head.
    pub rows: Vec<Node>,
}

/// Builds the dependency matrix: row `i` is a softmax over `j != i` of
/// `q_i . k_j / sqrt(d_k)`, where both projections read the per-agent
/// concatenation of feature and intention embedding supplied in `inputs`.
/// `noise`, when given, is added to the pre-softmax scores (row-major,
/// diagonal ignored) and receives no gradient.
pub fn dependency_matrix(
    tape: &mut Tape,
    head_store: &ParamStore,
    head: &AttentionHead,
    inputs: &[Node],
    noise: Option<&[f64]>,
) -> Result<DependencyOutput> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::TooFewAgents);
    }
    let wq = tape.param(head_store, &head.query)?;
    let wk = tape.param(head_store, &head.key)?;
    let scale = 1.0 / (head.dim as f64).sqrt();

    let qs: Vec<Node> = inputs.iter().map(|&x| tape.matvec(wq, x)).collect();
    let ks: Vec<Node> = inputs.iter().map(|&x| tape.matvec(wk, x)).collect();

    let mut rows = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut scores = Vec::with_capacity(n);
        for j in 0..n {
            let s = tape.dot_nodes(qs[i], ks[j]);
            let mut s = tape.scale(s, scale);
            if let Some(nz) = noise {
                if i != j {
                    let shift = tape.constant(vec![nz[i * n + j]]);
                    s = tape.add(s, shift);
                }
            }
            scores.push(s);
        }
        let score_vec = tape.concat(&scores);
        let mask: Vec<bool> = (0..n).map(|j| j == i).collect();
        let row = tape.masked_softmax(score_vec, &mask)?;
        data.extend_from_slice(tape.value(row));
        rows.push(row);
    }
    let matrix = DependencyMatrix::new(n, data)?;
    Ok(DependencyOutput { matrix, rows })
}

/// Observation aggregation: `c_i = sum_j w_ij h_j` with `w_i` a softmax
/// attention row over all agents including self. The values are the feature
/// vectors themselves (identity value projection).
pub fn aggregate_observations(
    tape: &mut Tape,
    store: &ParamStore,
    head: &AttentionHead,
    features: &[Node],
) -> Result<Vec<Node>> {
    let n = features.len();
    assert!(n >= 1, "aggregate_observations needs at least one agent");
    let wq = tape.param(store, &head.query)?;
    let wk = tape.param(store, &head.key)?;
    let scale = 1.0 / (head.dim as f64).sqrt();

    let qs: Vec<Node> = features.iter().map(|&x| tape.matvec(wq, x)).collect();
    let ks: Vec<Node> = features.iter().map(|&x| tape.matvec(wk, x)).collect();
    let mask = vec![false; n];

    let mut contexts = Vec::with_capacity(n);
    for i in 0..n {
        let mut scores = Vec::with_capacity(n);
        for j in 0..n {
            let s = tape.dot_nodes(qs[i], ks[j]);
            scores.push(tape.scale(s, scale));
        }
        let score_vec = tape.concat(&scores);
        let weights = tape.masked_softmax(score_vec, &mask)?;
        let mut acc: Option<Node> = None;
        for (j, &h) in features.iter().enumerate() {
            let wj = tape.index(weights, j);
            let term = tape.scale_by(h, wj);
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term),
            });
        }
        contexts.push(acc.expect("n >= 1"));
    }
    Ok(contexts)
}

/// Scores without the tape, for callers that only need point values.
pub fn dependency_matrix_values(
    head_store: &ParamStore,
    head: &AttentionHead,
    inputs: &[Vec<f64>],
    noise: Option<&[f64]>,
) -> Result<DependencyMatrix> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::TooFewAgents);
    }
    let wq = head_store.block(&head.query)?;
    let wk = head_store.block(&head.key)?;
    let scale = 1.0 / (head.dim as f64).sqrt();
    let project = |w: &crate::diffnet::param::Block, x: &[f64]| -> Vec<f64> {
        w.value
            .chunks_exact(w.cols)
            .map(|row| dot(row, x))
            .collect()
    };
    let qs: Vec<Vec<f64>> = inputs.iter().map(|x| project(wq, x)).collect();
    let ks: Vec<Vec<f64>> = inputs.iter().map(|x| project(wk, x)).collect();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut scores = vec![0.0; n];
        let mut mask = vec![false; n];
        for j in 0..n {
            scores[j] = dot(&qs[i], &ks[j]) * scale;
            if let Some(nz) = noise {
                if i != j {
                    scores[j] += nz[i * n + j];
                }
            }
        }
        mask[i] = true;
        let row = crate::diffnet::masked_softmax(&scores, &mask)?;
        data.extend_from_slice(&row);
    }
    DependencyMatrix::new(n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(
        rng: &mut ChaCha8Rng,
        n: usize,
        dim: usize,
    ) -> (ParamStore, AttentionHead, Vec<Vec<f64>>) {
        let mut store = ParamStore::new("dep");
        let head = AttentionHead::new("attn", 8);
        head.init(&mut store, dim, rng).unwrap();
        let inputs = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (store, head, inputs)
    }

    fn on_tape(tape: &mut Tape, inputs: &[Vec<f64>]) -> Vec<Node> {
        inputs.iter().map(|x| tape.constant(x.clone())).collect()
    }

    #[test]
    fn identical_inputs_give_uniform_off_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (store, head, _) = random_inputs(&mut rng, 4, 6);
        let shared: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inputs = vec![shared; 4];
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        let out = dependency_matrix(&mut tape, &store, &head, &nodes, None).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((out.matrix.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_agents_force_the_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (store, head, inputs) = random_inputs(&mut rng, 2, 5);
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        let out = dependency_matrix(&mut tape, &store, &head, &nodes, None).unwrap();
        assert_eq!(out.matrix.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn single_agent_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (store, head, inputs) = random_inputs(&mut rng, 1, 5);
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        assert!(matches!(
            dependency_matrix(&mut tape, &store, &head, &nodes, None),
            Err(Error::TooFewAgents)
        ));
    }

    #[test]
    fn random_inputs_satisfy_matrix_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..8 {
            let (store, head, inputs) = random_inputs(&mut rng, n, 7);
            let mut tape = Tape::new();
            let nodes = on_tape(&mut tape, &inputs);
            // Constructing DependencyMatrix revalidates the invariants.
            let out = dependency_matrix(&mut tape, &store, &head, &nodes, None).unwrap();
            for i in 0..n {
                let sum: f64 = out.matrix.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert_eq!(out.matrix.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, head, inputs) = random_inputs(&mut rng, 5, 6);
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        let base = dependency_matrix(&mut tape, &store, &head, &nodes, None).unwrap();

        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| inputs[p].clone()).collect();
        let mut tape2 = Tape::new();
        let nodes2 = on_tape(&mut tape2, &permuted);
        let out = dependency_matrix(&mut tape2, &store, &head, &nodes2, None).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let diff = (out.matrix.get(a, b) - base.matrix.get(perm[a], perm[b])).abs();
                assert!(diff < 1e-12, "({a},{b}) differs by {diff}");
            }
        }
    }

    #[test]
    fn gradients_reach_head_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut store, head, inputs) = random_inputs(&mut rng, 3, 6);
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        let out = dependency_matrix(&mut tape, &store, &head, &nodes, None).unwrap();
        // A generic scalar of the matrix.
        let coeffs = tape.constant((0..3).map(|i| i as f64 + 0.5).collect());
        let mut loss = None;
        for &row in &out.rows {
            let d = tape.dot_nodes(row, coeffs);
            loss = Some(match loss {
                None => d,
                Some(l) => tape.add(l, d),
            });
        }
        tape.backward(loss.unwrap());
        tape.accumulate_into(&mut store).unwrap();
        let gq: f64 = store.block(&head.query).unwrap().grad.iter().map(|g| g.abs()).sum();
        let gk: f64 = store.block(&head.key).unwrap().grad.iter().map(|g| g.abs()).sum();
        assert!(gq > 0.0 && gk > 0.0, "gq={gq} gk={gk}");
    }

    #[test]
    fn tape_and_value_paths_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (store, head, inputs) = random_inputs(&mut rng, 4, 6);
        let noise: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let mut tape = Tape::new();
        let nodes = on_tape(&mut tape, &inputs);
        let a = dependency_matrix(&mut tape, &store, &head, &nodes, Some(&noise)).unwrap();
        let b = dependency_matrix_values(&store, &head, &inputs, Some(&noise)).unwrap();
        for (x, y) in a.matrix.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn aggregate_single_agent_returns_own_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new("agent");
        let head = AttentionHead::new("ws", 8);
        head.init(&mut store, 4, &mut rng).unwrap();
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let hn = tape.constant(h.clone());
        let c = aggregate_observations(&mut tape, &store, &head, &[hn]).unwrap();
        for (a, b) in tape.value(c[0]).iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_identical_features_returns_the_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new("agent");
        let head = AttentionHead::new("ws", 8);
        head.init(&mut store, 4, &mut rng).unwrap();
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let nodes: Vec<Node> = (0..5).map(|_| tape.constant(h.clone())).collect();
        let cs = aggregate_observations(&mut tape, &store, &head, &nodes).unwrap();
        for &c in &cs {
            for (a, b) in tape.value(c).iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_stays_in_coordinatewise_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new("agent");
        let head = AttentionHead::new("ws", 8);
        head.init(&mut store, 3, &mut rng).unwrap();
        let hs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let nodes: Vec<Node> = hs.iter().map(|h| tape.constant(h.clone())).collect();
        let cs = aggregate_observations(&mut tape, &store, &head, &nodes).unwrap();
        for &c in &cs {
            for k in 0..3 {
                let v = tape.value(c)[k];
                let lo = hs.iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
                let hi = hs.iter().map(|h| h[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
