//! Per-agent network with shared parameters: a recurrent message encoder, a
//! feed-forward dependency encoder, observation/intention attention, and the
//! action-value head used for the sequential one-sided decision pass.
//!
//! All agents share one parameter set; identity enters through a one-hot id
//! appended to the encoder input alongside the previous action.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionHead, DependencyMatrix};
use crate::diffnet::layers::{Activation, Dense, GruCell};
use crate::diffnet::param::ParamStore;
use crate::diffnet::tape::{Node, Tape};
use crate::error::{Error, Result};
use crate::forest::LeaderFollowerForest;

/// Per-agent action-observation-history summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState(pub Vec<f64>);

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        RecurrentState(vec![0.0; hidden])
    }
}

/// Architecture constants plus accessors for the named blocks of the agent
/// and dependency-policy stores.
#[derive(Debug, Clone)]
pub struct AgentNetwork {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    /// Encoder hidden size; also the message dimension.
    pub hidden: usize,
    /// Learned action-embedding width.
    pub embed_dim: usize,
    /// Attention signature/query dimension.
    pub attn_dim: usize,
}

impl AgentNetwork {
    pub fn new(n_agents: usize, n_actions: usize, obs_dim: usize) -> Self {
        AgentNetwork {
            n_agents,
            n_actions,
            obs_dim,
            hidden: 64,
            embed_dim: 16,
            attn_dim: 32,
        }
    }

    /// Encoder input: `[obs ; one-hot(prev action) ; one-hot(agent id)]`.
    pub fn encoder_in_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    pub fn menc(&self) -> GruCell {
        GruCell::new("menc", self.encoder_in_dim(), self.hidden)
    }

    pub fn denc(&self) -> Dense {
        Dense::new("denc.w", "denc.b", Activation::Relu)
    }

    pub fn ws_head(&self) -> AttentionHead {
        AttentionHead::new("ws", self.attn_dim)
    }

    pub fn dep_head(&self) -> AttentionHead {
        AttentionHead::new("dep", self.attn_dim)
    }

    pub fn q_l1(&self) -> Dense {
        Dense::new("qhead.w1", "qhead.b1", Activation::Relu)
    }

    pub fn q_l2(&self) -> Dense {
        Dense::new("qhead.w2", "qhead.b2", Activation::Identity)
    }

    pub fn q_in_dim(&self) -> usize {
        2 * self.hidden + self.embed_dim
    }

    /// Agent-network parameters: M-ENC, observation attention, Q head, and
    /// the action-embedding table.
    pub fn init_agent_params(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new(id);
        self.menc().init(&mut store, rng)?;
        self.ws_head().init(&mut store, self.hidden, rng)?;
        self.q_l1().init(&mut store, self.q_in_dim(), self.hidden, rng)?;
        self.q_l2().init(&mut store, self.hidden, self.n_actions, rng)?;
        let limit = 1.0 / (self.embed_dim as f64).sqrt();
        store.add_uniform("embed", self.n_actions, self.embed_dim, limit, rng)?;
        Ok(store)
    }

    /// Dependency-policy parameters: D-ENC plus the dependency attention
    /// head.
    pub fn init_dep_params(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new(id);
        self.denc()
            .init(&mut store, self.encoder_in_dim(), self.hidden, rng)?;
        self.dep_head()
            .init(&mut store, self.hidden + self.embed_dim, rng)?;
        Ok(store)
    }

    /// One recurrent M-ENC step per agent over
    /// `[obs ; one-hot(prev action) ; one-hot(id)]`, with the previous
    /// hidden states already on the tape. Keeping the recurrence on one tape
    /// lets gradients flow through the whole episode.
    pub fn encode_features_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &[Vec<f64>],
        prev_actions: &[Option<usize>],
        prev: &[Node],
    ) -> Result<Vec<Node>> {
        let menc = self.menc();
        let mut hs = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let input = tape.constant(self.encoder_input(&obs[i], prev_actions[i], i));
            hs.push(menc.forward(tape, store, input, prev[i])?);
        }
        Ok(hs)
    }

    /// Rollout variant of [`Self::encode_features_nodes`]: previous states
    /// enter as constants (no cross-step gradient) and the new states come
    /// back as plain values for the next environment step.
    pub fn encode_features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &[Vec<f64>],
        prev_actions: &[Option<usize>],
        prev: &[RecurrentState],
    ) -> Result<(Vec<Node>, Vec<RecurrentState>)> {
        let prev_nodes: Vec<Node> = prev.iter().map(|s| tape.constant(s.0.clone())).collect();
        let hs = self.encode_features_nodes(tape, store, obs, prev_actions, &prev_nodes)?;
        let states = hs
            .iter()
            .map(|&h| RecurrentState(tape.value(h).to_vec()))
            .collect();
        Ok((hs, states))
    }

    /// Feed-forward D-ENC over the same per-agent input.
    pub fn encode_dependency_features(
        &self,
        tape: &mut Tape,
        dep_store: &ParamStore,
        obs: &[Vec<f64>],
        prev_actions: &[Option<usize>],
    ) -> Result<Vec<Node>> {
        let denc = self.denc();
        (0..self.n_agents)
            .map(|i| {
                let input = tape.constant(self.encoder_input(&obs[i], prev_actions[i], i));
                denc.forward(tape, dep_store, input)
            })
            .collect()
    }

    pub fn encoder_input(
        &self,
        obs: &[f64],
        prev_action: Option<usize>,
        agent_id: usize,
    ) -> Vec<f64> {
        assert_eq!(obs.len(), self.obs_dim, "observation dimension");
        let mut v = Vec::with_capacity(self.encoder_in_dim());
        v.extend_from_slice(obs);
        v.extend(one_hot(self.n_actions, prev_action));
        v.extend(one_hot(self.n_agents, Some(agent_id)));
        v
    }

    /// Action-embedding row for a discrete action.
    pub fn embed_action(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        action: usize,
    ) -> Result<Node> {
        let table = tape.param(store, "embed")?;
        Ok(tape.row(table, action))
    }

    /// Q values over actions from `[h ; c ; x]`.
    pub fn q_values(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Node,
        c: Node,
        x: Node,
    ) -> Result<Node> {
        let input = tape.concat(&[h, c, x]);
        let hid = self.q_l1().forward(tape, store, input)?;
        self.q_l2().forward(tape, store, hid)
    }

    /// Q values with zeroed message inputs, `Q(h, 0, 0)`.
    pub fn q_values_zero(&self, tape: &mut Tape, store: &ParamStore, h: Node) -> Result<Node> {
        let c0 = tape.zeros(self.hidden);
        let x0 = tape.zeros(self.embed_dim);
        self.q_values(tape, store, h, c0, x0)
    }

    /// Per-agent dependency attention inputs `[g_i ; embed(intention_i)]`.
    /// The embedding table lives in the agent store.
    pub fn dependency_inputs(
        &self,
        tape: &mut Tape,
        agent_store: &ParamStore,
        g: &[Node],
        intentions: &[usize],
    ) -> Result<Vec<Node>> {
        g.iter()
            .zip(intentions)
            .map(|(&gi, &u)| {
                let e = self.embed_action(tape, agent_store, u)?;
                Ok(tape.concat(&[gi, e]))
            })
            .collect()
    }
}

pub fn one_hot(len: usize, idx: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if let Some(i) = idx {
        v[i] = 1.0;
    }
    v
}

/// With probability `epsilon`, a uniform draw over the available actions
/// (greedy included); otherwise the greedy action. Exploration consumes one
/// uniform sample plus one index draw when it triggers.
fn epsilon_greedy(
    greedy: usize,
    avail: &[bool],
    epsilon: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> usize {
    if epsilon <= 0.0 {
        return greedy;
    }
    let r = rng.expect("exploration needs an rng");
    if r.gen::<f64>() < epsilon {
        let options: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
        options[r.gen_range(0..options.len())]
    } else {
        greedy
    }
}

/// Highest available entry, ties to the lowest index.
pub fn masked_argmax(values: &[f64], avail: &[bool]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        if avail[i] && best.map_or(true, |(bv, _)| v > bv) {
            best = Some((v, i));
        }
    }
    best.map(|(_, i)| i).ok_or(Error::NoAvailableAction)
}

/// Gap between the largest and second-largest available values; zero when
/// fewer than two actions are available.
pub fn confidence_gap(values: &[f64], avail: &[bool]) -> f64 {
    let mut top: Option<f64> = None;
    let mut second: Option<f64> = None;
    for (i, &v) in values.iter().enumerate() {
        if !avail[i] {
            continue;
        }
        match top {
            None => top = Some(v),
            Some(t) if v > t => {
                second = top;
                top = Some(v);
            }
            _ => match second {
                None => second = Some(v),
                Some(s) if v > s => second = Some(v),
                _ => {}
            },
        }
    }
    match (top, second) {
        (Some(t), Some(s)) => t - s,
        _ => 0.0,
    }
}

/// Initial greedy intentions and zero-message confidences from `Q(h, 0, 0)`.
pub struct IntentionOutput {
    pub intentions: Vec<usize>,
    pub conf_zero: Vec<f64>,
}

pub fn initial_intentions(
    tape: &mut Tape,
    store: &ParamStore,
    net: &AgentNetwork,
    h: &[Node],
    avail: &[Vec<bool>],
) -> Result<IntentionOutput> {
    let mut intentions = Vec::with_capacity(h.len());
    let mut conf_zero = Vec::with_capacity(h.len());
    for (i, &hi) in h.iter().enumerate() {
        let q = net.q_values_zero(tape, store, hi)?;
        let qv = tape.value(q);
        intentions.push(masked_argmax(qv, &avail[i])?);
        conf_zero.push(confidence_gap(qv, &avail[i]));
    }
    Ok(IntentionOutput {
        intentions,
        conf_zero,
    })
}

/// Result of a joint decision pass.
#[derive(Debug, Clone)]
pub struct SeqDecision {
    pub actions: Vec<usize>,
    /// Per-agent action-value vectors at the inputs actually used.
    pub q_values: Vec<Vec<f64>>,
    /// Confidence after communication, from the same vectors.
    pub conf_post: Vec<f64>,
    /// Per-agent Q node at the taken action (for training passes).
    pub q_taken: Vec<Node>,
}

/// Sequential epsilon-greedy decisions in forest order: each agent sums the
/// action embeddings of its ancestors' already-fixed choices into `x_i` and
/// acts on `Q(h_i, c_i, x_i)`. A chosen action is immutable within the step,
/// so what flows down an edge is always the sender's executed action.
/// Acyclicity is guaranteed by construction of [`LeaderFollowerForest`].
///
/// `forced` is an intervention hook for analysis: a `Some(a)` entry replaces
/// that agent's choice (and what its descendants see) with `a`.
#[allow(clippy::too_many_arguments)]
pub fn sequential_decide_forced(
    tape: &mut Tape,
    store: &ParamStore,
    net: &AgentNetwork,
    h: &[Node],
    c: &[Node],
    forest: &LeaderFollowerForest,
    avail: &[Vec<bool>],
    epsilon: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    forced: &[Option<usize>],
) -> Result<SeqDecision> {
    let n = net.n_agents;
    assert_eq!(forest.n(), n, "forest size");
    let mut actions = vec![usize::MAX; n];
    let mut q_values = vec![Vec::new(); n];
    let mut conf_post = vec![0.0; n];
    let mut q_taken: Vec<Option<Node>> = vec![None; n];

    for &i in forest.topological_order() {
        let mut x: Option<Node> = None;
        for a in forest.ancestors(i) {
            let e = net.embed_action(tape, store, actions[a])?;
            x = Some(match x {
                None => e,
                Some(acc) => tape.add(acc, e),
            });
        }
        let x = match x {
            Some(x) => x,
            None => tape.zeros(net.embed_dim),
        };
        let q = net.q_values(tape, store, h[i], c[i], x)?;
        let qv = tape.value(q).to_vec();
        let greedy = masked_argmax(&qv, &avail[i])?;
        let chosen = match forced.get(i).copied().flatten() {
            Some(a) => a,
            None => epsilon_greedy(greedy, &avail[i], epsilon, rng.as_deref_mut()),
        };
        conf_post[i] = confidence_gap(&qv, &avail[i]);
        q_taken[i] = Some(tape.index(q, chosen));
        q_values[i] = qv;
        actions[i] = chosen;
    }
    Ok(SeqDecision {
        actions,
        q_values,
        conf_post,
        q_taken: q_taken.into_iter().map(|q| q.unwrap()).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn sequential_decide(
    tape: &mut Tape,
    store: &ParamStore,
    net: &AgentNetwork,
    h: &[Node],
    c: &[Node],
    forest: &LeaderFollowerForest,
    avail: &[Vec<bool>],
    epsilon: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<SeqDecision> {
    let forced = vec![None; net.n_agents];
    sequential_decide_forced(tape, store, net, h, c, forest, avail, epsilon, rng, &forced)
}

/// Full-sharing decisions: every agent re-decides simultaneously given the
/// broadcast initial intentions of all others, `x_i = sum_{j != i}
/// embed(intention_j)`. Because everyone may flip at once, the broadcast
/// intention can differ from the executed action; this is the pattern that
/// deceives.
#[allow(clippy::too_many_arguments)]
pub fn fs_decide(
    tape: &mut Tape,
    store: &ParamStore,
    net: &AgentNetwork,
    h: &[Node],
    c: &[Node],
    intentions: &[usize],
    avail: &[Vec<bool>],
    epsilon: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<SeqDecision> {
    let n = net.n_agents;
    let mut actions = vec![0usize; n];
    let mut q_values = vec![Vec::new(); n];
    let mut conf_post = vec![0.0; n];
    let mut q_taken = Vec::with_capacity(n);
    for i in 0..n {
        let mut x: Option<Node> = None;
        for (j, &u) in intentions.iter().enumerate() {
            if j == i {
                continue;
            }
            let e = net.embed_action(tape, store, u)?;
            x = Some(match x {
                None => e,
                Some(acc) => tape.add(acc, e),
            });
        }
        let x = match x {
            Some(x) => x,
            None => tape.zeros(net.embed_dim),
        };
        let q = net.q_values(tape, store, h[i], c[i], x)?;
        let qv = tape.value(q).to_vec();
        let greedy = masked_argmax(&qv, &avail[i])?;
        let chosen = epsilon_greedy(greedy, &avail[i], epsilon, rng.as_deref_mut());
        conf_post[i] = confidence_gap(&qv, &avail[i]);
        q_taken.push(tape.index(q, chosen));
        q_values[i] = qv;
        actions[i] = chosen;
    }
    Ok(SeqDecision {
        actions,
        q_values,
        conf_post,
        q_taken,
    })
}

/// Everything recorded about one joint decision step.
#[derive(Debug, Clone)]
pub struct JointDecision {
    pub actions: Vec<usize>,
    /// Initial intentions from `Q(h, 0, 0)`.
    pub intentions: Vec<usize>,
    /// What each agent's receivers saw: the executed action under one-sided
    /// sharing, the broadcast intention under full sharing.
    pub transmitted: Vec<usize>,
    pub q_values: Vec<Vec<f64>>,
    pub conf_post: Vec<f64>,
    pub conf_zero: Vec<f64>,
    pub forest: LeaderFollowerForest,
    pub dependency: Option<DependencyMatrix>,
}

impl JointDecision {
    /// One-sided sharing never deceives: transmitted equals executed.
    pub fn assert_no_deceit_under_one_sided(&self) {
        for (t, a) in self.transmitted.iter().zip(&self.actions) {
            assert_eq!(t, a, "one-sided transmission must equal the executed action");
        }
    }
}
