//! Centralised-training value networks: the state/forest bias V(s, w^f) and
//! the DDPG critic Q(s, w^d).

use rand_chacha::ChaCha8Rng;

use crate::diffnet::layers::{Activation, Dense};
use crate::diffnet::param::ParamStore;
use crate::diffnet::tape::{dot, Node, Tape};
use crate::error::Result;
use crate::forest::LeaderFollowerForest;

/// Feed-forward scalar bias over `[state ; flattened parent indicator]`.
#[derive(Debug, Clone)]
pub struct BiasNetwork {
    pub state_dim: usize,
    pub n_agents: usize,
    pub hidden: usize,
}

impl BiasNetwork {
    pub fn new(state_dim: usize, n_agents: usize) -> Self {
        BiasNetwork {
            state_dim,
            n_agents,
            hidden: 64,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.state_dim + self.n_agents * self.n_agents
    }

    fn l1(&self) -> Dense {
        Dense::new("vnet.w1", "vnet.b1", Activation::Relu)
    }

    fn l2(&self) -> Dense {
        Dense::new("vnet.w2", "vnet.b2", Activation::Identity)
    }

    pub fn init_params(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new(id);
        self.l1().init(&mut store, self.in_dim(), self.hidden, rng)?;
        self.l2().init(&mut store, self.hidden, 1, rng)?;
        Ok(store)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &[f64],
        forest: &LeaderFollowerForest,
    ) -> Result<Node> {
        let mut input = Vec::with_capacity(self.in_dim());
        input.extend_from_slice(state);
        input.extend(forest.parent_indicator());
        let x = tape.constant(input);
        let h = self.l1().forward(tape, store, x)?;
        self.l2().forward(tape, store, h)
    }

    pub fn forward_value(
        &self,
        store: &ParamStore,
        state: &[f64],
        forest: &LeaderFollowerForest,
    ) -> Result<f64> {
        let mut input = Vec::with_capacity(self.in_dim());
        input.extend_from_slice(state);
        input.extend(forest.parent_indicator());
        let h = dense_value(store, &self.l1(), &input)?;
        Ok(dense_value(store, &self.l2(), &h)?[0])
    }
}

/// Feed-forward critic over `[state ; flattened dependency matrix]` with
/// configurable ReLU hidden sizes (empty = linear).
#[derive(Debug, Clone)]
pub struct CriticNetwork {
    pub state_dim: usize,
    pub n_agents: usize,
    pub hidden: Vec<usize>,
}

impl CriticNetwork {
    pub fn new(state_dim: usize, n_agents: usize) -> Self {
        CriticNetwork {
            state_dim,
            n_agents,
            hidden: vec![128, 64],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.state_dim + self.n_agents * self.n_agents
    }

    fn layers(&self) -> Vec<(Dense, usize, usize)> {
        let mut dims = vec![self.in_dim()];
        dims.extend(&self.hidden);
        dims.push(1);
        (0..dims.len() - 1)
            .map(|i| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                (
                    Dense::new(
                        format!("critic.l{i}.w"),
                        format!("critic.l{i}.b"),
                        act,
                    ),
                    dims[i],
                    dims[i + 1],
                )
            })
            .collect()
    }

    pub fn init_params(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new(id);
        for (layer, in_dim, out_dim) in self.layers() {
            layer.init(&mut store, in_dim, out_dim, rng)?;
        }
        Ok(store)
    }

    /// Critic over a dependency matrix living on the tape (rows as nodes),
    /// used when gradients must flow into the matrix.
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &[f64],
        dependency_rows: &[Node],
    ) -> Result<Node> {
        let s = tape.constant(state.to_vec());
        let mut parts = vec![s];
        parts.extend_from_slice(dependency_rows);
        let mut x = tape.concat(&parts);
        for (layer, _, _) in self.layers() {
            x = layer.forward(tape, store, x)?;
        }
        Ok(x)
    }

    /// Critic over a stored (constant) dependency matrix.
    pub fn forward_const(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &[f64],
        dependency: &[f64],
    ) -> Result<Node> {
        let mut input = Vec::with_capacity(self.in_dim());
        input.extend_from_slice(state);
        input.extend_from_slice(dependency);
        let mut x = tape.constant(input);
        for (layer, _, _) in self.layers() {
            x = layer.forward(tape, store, x)?;
        }
        Ok(x)
    }

    pub fn forward_value(
        &self,
        store: &ParamStore,
        state: &[f64],
        dependency: &[f64],
    ) -> Result<f64> {
        let mut x = Vec::with_capacity(self.in_dim());
        x.extend_from_slice(state);
        x.extend_from_slice(dependency);
        for (layer, _, _) in self.layers() {
            x = dense_value(store, &layer, &x)?;
        }
        Ok(x[0])
    }
}

/// Tape-free dense evaluation, bit-identical to the tape path (same dot and
/// add ordering).
pub fn dense_value(store: &ParamStore, layer: &Dense, input: &[f64]) -> Result<Vec<f64>> {
    let w = store.block(&layer.w)?;
    let b = store.block(&layer.b)?;
    assert_eq!(input.len(), w.cols, "dense_value input dim");
    let mut out: Vec<f64> = w
        .value
        .chunks_exact(w.cols)
        .zip(&b.value)
        .map(|(row, &bias)| dot(row, input) + bias)
        .collect();
    if layer.activation == Activation::Relu {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    Ok(out)
}
