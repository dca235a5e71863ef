//! The experiment loop: rollouts with the configured sharing pattern,
//! episode-granular training, periodic greedy evaluation, metrics, and
//! checkpoints. A run is fully determined by its config (seed included).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    fs_decide, initial_intentions, sequential_decide, AgentNetwork, JointDecision, RecurrentState,
};
use crate::attention::{aggregate_observations, dependency_matrix};
use crate::diffnet::checkpoint::{self, Checkpoint};
use crate::diffnet::tape::Tape;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, SharingPattern};
use crate::experiment::metrics::{MetricsRow, MetricsWriter};
use crate::experiment::pattern::{deceive_rate, line_forest, random_forest};
use crate::forest::{depth_bound, generate, LeaderFollowerForest};
use crate::learning::{
    communication_reward, intrinsic_reward_parts, BiasNetwork, CriticNetwork, DecideMode, Episode,
    Hyper, Learner, ReplayBuffer, StoreSet, Transition,
};

/// Independent deterministic stream `k` of a seed.
pub fn rng_stream(seed: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Standard normal via Box-Muller; two uniform draws per sample.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeStats {
    pub ret: f64,
    pub len: usize,
    pub deceive: f64,
    pub tree_count_sum: f64,
    pub max_depth: usize,
    pub r_int_sum: f64,
    pub v_sum: f64,
}

/// Plays one episode with the online parameters: encode, initial
/// intentions, dependency matrix (plus exploration noise), forest
/// generation with depth bounding, sequential decisions, environment step,
/// and transition assembly.
#[allow(clippy::too_many_arguments)]
pub fn play_episode(
    env: &mut dyn Environment,
    learner: &Learner,
    cfg: &ExperimentConfig,
    epsilon: f64,
    noise_sigma: f64,
    env_rng: &mut ChaCha8Rng,
    explore_rng: &mut ChaCha8Rng,
    mut render: Option<&mut dyn Write>,
) -> Result<(Episode, EpisodeStats)> {
    env.reset(env_rng)?;
    let net = &learner.net;
    let n = net.n_agents;
    let mut states = vec![RecurrentState::zeros(net.hidden); n];
    let mut prev_actions: Vec<Option<usize>> = vec![None; n];
    let mut episode: Episode = Vec::new();
    let mut decisions: Vec<JointDecision> = Vec::new();
    let mut stats = EpisodeStats::default();

    loop {
        let obs = env.observations();
        let state = env.global_state();
        let avail = env.avail_actions();

        let mut tape = Tape::new();
        let (h, next_states) =
            net.encode_features(&mut tape, &learner.online.agent, &obs, &prev_actions, &states)?;
        let c = aggregate_observations(&mut tape, &learner.online.agent, &net.ws_head(), &h)?;
        let intent = initial_intentions(&mut tape, &learner.online.agent, net, &h, &avail)?;

        let (forest, dependency) = match cfg.pattern {
            SharingPattern::Lff => {
                let g = net.encode_dependency_features(
                    &mut tape,
                    &learner.online.dep,
                    &obs,
                    &prev_actions,
                )?;
                let inputs = net.dependency_inputs(
                    &mut tape,
                    &learner.online.agent,
                    &g,
                    &intent.intentions,
                )?;
                let noise: Option<Vec<f64>> = if noise_sigma > 0.0 {
                    Some(
                        (0..n * n)
                            .map(|k| {
                                if k / n == k % n {
                                    0.0
                                } else {
                                    noise_sigma * gaussian(explore_rng)
                                }
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                let out = dependency_matrix(
                    &mut tape,
                    &learner.online.dep,
                    &net.dep_head(),
                    &inputs,
                    noise.as_deref(),
                )?;
                let topk = if cfg.topk == 0 { None } else { Some(cfg.topk) };
                let raw = generate(&out.matrix, topk)?;
                let bounded = depth_bound(&raw, &out.matrix, cfg.depth_bound);
                (bounded, Some(out.matrix))
            }
            SharingPattern::Ns | SharingPattern::Fs => (LeaderFollowerForest::edgeless(n), None),
            SharingPattern::Line => (line_forest(n), None),
            SharingPattern::Random => (random_forest(n, explore_rng), None),
        };

        let decision = match cfg.pattern {
            SharingPattern::Fs => fs_decide(
                &mut tape,
                &learner.online.agent,
                net,
                &h,
                &c,
                &intent.intentions,
                &avail,
                epsilon,
                Some(explore_rng),
            )?,
            _ => sequential_decide(
                &mut tape,
                &learner.online.agent,
                net,
                &h,
                &c,
                &forest,
                &avail,
                epsilon,
                Some(explore_rng),
            )?,
        };
        let transmitted = match cfg.pattern {
            SharingPattern::Fs => intent.intentions.clone(),
            _ => decision.actions.clone(),
        };

        let vb = learner
            .vnet
            .forward(&mut tape, &learner.online.bias, &state, &forest)?;
        let v = tape.scalar(vb);
        let r_int = intrinsic_reward_parts(&decision.conf_post, &intent.conf_zero);
        let r_comm = communication_reward(v, r_int, cfg.intrinsic_coef);

        if let Some(out) = render.as_deref_mut() {
            write!(out, "{}", env.render_ascii())?;
        }
        let (reward, done) = env.step(&decision.actions, env_rng)?;
        if let Some(out) = render.as_deref_mut() {
            writeln!(
                out,
                "step {} actions {:?} reward {:?}{}",
                stats.len,
                decision.actions,
                reward,
                if done { " terminal" } else { "" }
            )?;
        }

        stats.ret += reward;
        stats.len += 1;
        stats.tree_count_sum += forest.tree_count() as f64;
        stats.max_depth = stats.max_depth.max(forest.max_level());
        stats.r_int_sum += r_int;
        stats.v_sum += v;

        let jd = JointDecision {
            actions: decision.actions.clone(),
            intentions: intent.intentions.clone(),
            transmitted: transmitted.clone(),
            q_values: decision.q_values.clone(),
            conf_post: decision.conf_post.clone(),
            conf_zero: intent.conf_zero.clone(),
            forest: forest.clone(),
            dependency: dependency.clone(),
        };
        if cfg.pattern != SharingPattern::Fs {
            jd.assert_no_deceit_under_one_sided();
        }
        decisions.push(jd);

        episode.push(Transition {
            obs,
            state,
            avail,
            actions: decision.actions.clone(),
            intentions: intent.intentions.clone(),
            prev_actions: prev_actions.clone(),
            forest,
            dependency,
            reward,
            terminal: done,
            conf_post: decision.conf_post,
            conf_zero: intent.conf_zero,
            v_bias: v,
            r_int,
            r_comm,
        });

        prev_actions = decision.actions.iter().map(|&a| Some(a)).collect();
        states = next_states;
        if done {
            break;
        }
    }
    stats.deceive = deceive_rate(&decisions);
    Ok((episode, stats))
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub mean: f64,
    pub stderr: f64,
    pub returns: Vec<f64>,
    pub mean_len: f64,
}

/// Greedy evaluation: epsilon and dependency noise both zero. Reports the
/// mean return with its standard error over the requested episodes.
pub fn eval_greedy(
    cfg: &ExperimentConfig,
    learner: &Learner,
    episodes: u32,
    eval_seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut env = cfg.build_env()?;
    let mut env_rng = rng_stream(eval_seed, 101);
    let mut explore_rng = rng_stream(eval_seed, 102);
    let mut returns = Vec::with_capacity(episodes as usize);
    let mut len_sum = 0usize;
    for _ in 0..episodes {
        let (_, st) = play_episode(
            env.as_mut(),
            learner,
            cfg,
            0.0,
            0.0,
            &mut env_rng,
            &mut explore_rng,
            None,
        )?;
        returns.push(st.ret);
        len_sum += st.len;
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let stderr = if returns.len() < 2 {
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (returns.len() - 1) as f64;
        (var / returns.len() as f64).sqrt()
    };
    Ok(EvalResult {
        mean,
        stderr,
        mean_len: len_sum as f64 / episodes as f64,
        returns,
    })
}

pub struct RunOutput {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub episodes: u64,
    pub env_steps: u64,
}

/// Builds the networks for a config.
pub fn build_learner(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Learner> {
    let env = cfg.build_env()?;
    let net = AgentNetwork::new(env.n_agents(), env.n_actions(), env.obs_dim());
    let vnet = BiasNetwork::new(env.state_dim(), env.n_agents());
    let critic = CriticNetwork::new(env.state_dim(), env.n_agents());
    let hyper = Hyper {
        gamma: cfg.gamma,
        lr: cfg.lr,
        rmsprop_decay: cfg.rmsprop_decay,
        rmsprop_eps: cfg.rmsprop_eps,
        batch_episodes: cfg.batch_episodes,
        target_copy_interval: cfg.target_copy_interval,
    };
    Learner::new(net, vnet, critic, hyper, rng)
}

/// The full training loop. Writes one metrics CSV (one row per evaluation
/// interval) and a final checkpoint; fails before any side effect if the
/// config is invalid.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut env = cfg.build_env()?;
    let mut init_rng = rng_stream(cfg.seed, 0);
    let mut learner = build_learner(cfg, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_episodes);
    let mut env_rng = rng_stream(cfg.seed, 1);
    let mut explore_rng = rng_stream(cfg.seed, 2);
    let mut train_rng = rng_stream(cfg.seed, 3);

    let mode = if cfg.pattern == SharingPattern::Fs {
        DecideMode::FullSharing
    } else {
        DecideMode::Forest
    };
    let train_comm = cfg.pattern == SharingPattern::Lff;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = Path::new(&cfg.out_dir).join(format!("metrics_seed{}.csv", cfg.seed));
    let checkpoint_path = Path::new(&cfg.out_dir).join(format!("ckpt_seed{}.ckpt", cfg.seed));
    let mut metrics = MetricsWriter::create(&metrics_path)?;

    let mut env_steps = 0u64;
    let mut episodes = 0u64;
    let mut next_eval = cfg.eval_interval.max(1);
    let mut next_ckpt = if cfg.checkpoint_interval > 0 {
        cfg.checkpoint_interval
    } else {
        u64::MAX
    };
    let mut eval_count = 0u64;

    // Interval accumulators.
    let mut acc = IntervalAcc::default();

    while env_steps < cfg.total_steps {
        let epsilon = cfg.epsilon_at(env_steps);
        let sigma = cfg.noise_sigma_at(env_steps);
        let (episode, st) = play_episode(
            env.as_mut(),
            &learner,
            cfg,
            epsilon,
            sigma,
            &mut env_rng,
            &mut explore_rng,
            None,
        )?;
        env_steps += st.len as u64;
        episodes += 1;
        buffer.push(episode);
        acc.absorb_rollout(&st);

        for _ in 0..cfg.train_steps_per_episode {
            if let Some(m) = learner.train_step(&buffer, &mut train_rng, mode, train_comm)? {
                acc.absorb_train(&m);
            }
        }

        if env_steps >= next_eval {
            eval_count += 1;
            let eval = eval_greedy(cfg, &learner, cfg.eval_episodes, cfg.seed ^ eval_count)?;
            metrics.write(&acc.row(env_steps, episodes, epsilon, &eval))?;
            acc = IntervalAcc::default();
            while next_eval <= env_steps {
                next_eval += cfg.eval_interval.max(1);
            }
        }
        if env_steps >= next_ckpt {
            save_checkpoint(
                &Path::new(&cfg.out_dir)
                    .join(format!("ckpt_seed{}_step{}.ckpt", cfg.seed, env_steps)),
                cfg,
                &learner,
                env_steps,
                episodes,
            )?;
            while next_ckpt <= env_steps {
                next_ckpt += cfg.checkpoint_interval;
            }
        }
    }

    if acc.rollouts > 0 {
        eval_count += 1;
        let eval = eval_greedy(cfg, &learner, cfg.eval_episodes, cfg.seed ^ eval_count)?;
        metrics.write(&acc.row(env_steps, episodes, cfg.epsilon_at(env_steps), &eval))?;
    }
    save_checkpoint(&checkpoint_path, cfg, &learner, env_steps, episodes)?;
    Ok(RunOutput {
        metrics_path,
        checkpoint_path,
        episodes,
        env_steps,
    })
}

#[derive(Default)]
struct IntervalAcc {
    rollouts: u64,
    steps: usize,
    r_int_sum: f64,
    v_sum: f64,
    tree_sum: f64,
    max_depth: usize,
    deceive_sum: f64,
    agent_loss_sum: f64,
    critic_loss_sum: f64,
    train_steps: u64,
}

impl IntervalAcc {
    fn absorb_rollout(&mut self, st: &EpisodeStats) {
        self.rollouts += 1;
        self.steps += st.len;
        self.r_int_sum += st.r_int_sum;
        self.v_sum += st.v_sum;
        self.tree_sum += st.tree_count_sum;
        self.max_depth = self.max_depth.max(st.max_depth);
        self.deceive_sum += st.deceive;
    }

    fn absorb_train(&mut self, m: &crate::learning::TrainMetrics) {
        self.train_steps += 1;
        self.agent_loss_sum += m.agent_loss;
        self.critic_loss_sum += m.critic_loss;
    }

    fn row(&self, step: u64, episode: u64, epsilon: f64, eval: &EvalResult) -> MetricsRow {
        let steps = self.steps.max(1) as f64;
        let rollouts = self.rollouts.max(1) as f64;
        let trains = self.train_steps.max(1) as f64;
        MetricsRow {
            step,
            episode,
            mean_return: eval.mean,
            mean_ep_len: eval.mean_len,
            epsilon,
            agent_loss: self.agent_loss_sum / trains,
            critic_loss: self.critic_loss_sum / trains,
            mean_r_int: self.r_int_sum / steps,
            mean_v: self.v_sum / steps,
            tree_count: self.tree_sum / steps,
            max_depth: self.max_depth as f64,
            deceive_rate: self.deceive_sum / rollouts,
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ExperimentConfig,
    learner: &Learner,
    env_steps: u64,
    episodes: u64,
) -> Result<()> {
    checkpoint::save(
        path,
        &cfg.serialize(),
        &[
            ("updates".to_string(), learner.updates),
            ("env_steps".to_string(), env_steps),
            ("episodes".to_string(), episodes),
        ],
        &[
            &learner.online.agent,
            &learner.online.dep,
            &learner.online.bias,
            &learner.online.critic,
            &learner.target.agent,
            &learner.target.dep,
            &learner.target.bias,
            &learner.target.critic,
        ],
    )
}

/// Rebuilds a learner from a checkpoint, validating the store layout
/// against the config (the embedded one by default).
pub fn load_learner(ckpt: &Checkpoint, cfg: &ExperimentConfig) -> Result<Learner> {
    let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
    let fresh = build_learner(cfg, &mut probe_rng)?;
    let expect_layout = |expected: &crate::diffnet::ParamStore,
                         id: &str|
     -> Result<crate::diffnet::ParamStore> {
        let loaded = ckpt.store(id)?;
        for (e, l) in expected.blocks().zip(loaded.blocks()) {
            if e.name != l.name || e.rows != l.rows || e.cols != l.cols {
                return Err(Error::Checkpoint(format!(
                    "checkpoint/config mismatch in store `{id}`: expected {} {}x{}, found {} {}x{}",
                    e.name, e.rows, e.cols, l.name, l.rows, l.cols
                )));
            }
        }
        if expected.blocks().count() != loaded.blocks().count() {
            return Err(Error::Checkpoint(format!(
                "checkpoint/config mismatch: store `{id}` block count"
            )));
        }
        Ok(loaded.clone())
    };
    let online = StoreSet {
        agent: expect_layout(&fresh.online.agent, "agent")?,
        dep: expect_layout(&fresh.online.dep, "dep")?,
        bias: expect_layout(&fresh.online.bias, "bias")?,
        critic: expect_layout(&fresh.online.critic, "critic")?,
    };
    let target = StoreSet {
        agent: expect_layout(&fresh.target.agent, "agent_t")?,
        dep: expect_layout(&fresh.target.dep, "dep_t")?,
        bias: expect_layout(&fresh.target.bias, "bias_t")?,
        critic: expect_layout(&fresh.target.critic, "critic_t")?,
    };
    Ok(Learner::from_stores(
        fresh.net,
        fresh.vnet,
        fresh.critic,
        fresh.hyper,
        online,
        target,
        ckpt.counter("updates")?,
    ))
}

/// Plays one greedy episode with per-step ASCII renders into `out`.
pub fn trace_episode(
    cfg: &ExperimentConfig,
    learner: &Learner,
    seed: u64,
    out: &mut dyn Write,
) -> Result<EpisodeStats> {
    let mut env = cfg.build_env()?;
    let mut env_rng = rng_stream(seed, 201);
    let mut explore_rng = rng_stream(seed, 202);
    let (_, st) = play_episode(
        env.as_mut(),
        learner,
        cfg,
        0.0,
        0.0,
        &mut env_rng,
        &mut explore_rng,
        Some(out),
    )?;
    writeln!(out, "return {:?} over {} steps", st.ret, st.len)?;
    Ok(st)
}
