//! Multi-agent PPO: per-agent actor and critic networks with hand-written
//! backprop, discounted returns, truncated GAE, the clipped surrogate and
//! the training loop. In `mappo` mode every critic sees the global state
//! (concatenated observations); in `ippo` mode each critic sees only its
//! agent's observation.
//!
//! Learning-curve file columns: `episode mean_qoe q1 q2 q3 q4 freeze_freq`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{AbrPolicy, Decision, EpisodeLog, StreamingEnv};
use crate::error::{Error, Result};
use crate::params::{Adam, ParamSet, ParamTensor};
use crate::text;

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: ParamSet,
}

/// Layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-normal weights, zero biases; the output layer is scaled by
    /// `out_gain`.
    pub fn new(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("layer sizes", "need at least input and output sizes, all positive"));
        }
        let mut params = ParamSet::new();
        let layers = sizes.len() - 1;
        for j in 0..layers {
            let (fan_in, fan_out) = (sizes[j], sizes[j + 1]);
            let mut std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            if j + 1 == layers {
                std *= out_gain;
            }
            let data = if std > 0.0 {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
            } else {
                vec![0.0; fan_in * fan_out]
            };
            params.push(ParamTensor {
                name: format!("l{j}.w"),
                rows: fan_in,
                cols: fan_out,
                data,
            });
            params.push(ParamTensor::zeros(format!("l{j}.b"), 1, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "network input has {} values, expected {}",
                x.len(),
                self.input_len()
            )));
        }
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut a = x.to_vec();
        for j in 0..layers {
            let w = self.params.get(2 * j);
            let b = self.params.get(2 * j + 1);
            let mut z = b.data.clone();
            for (i, &ai) in a.iter().enumerate() {
                let row = &w.data[i * w.cols..(i + 1) * w.cols];
                for (zk, wk) in z.iter_mut().zip(row) {
                    *zk += ai * wk;
                }
            }
            if j + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        Ok((a, MlpCache { inputs }))
    }

    /// Accumulates parameter gradients for the upstream gradient of the
    /// output into `grads` (one buffer per tensor).
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], grads: &mut [Vec<f64>]) {
        let layers = self.sizes.len() - 1;
        let mut g = upstream.to_vec();
        for j in (0..layers).rev() {
            let input = &cache.inputs[j];
            let w = self.params.get(2 * j);
            {
                let gw = &mut grads[2 * j];
                for (i, &ai) in input.iter().enumerate() {
                    if ai != 0.0 {
                        for (k, gk) in g.iter().enumerate() {
                            gw[i * w.cols + k] += ai * gk;
                        }
                    }
                }
            }
            for (gb, gk) in grads[2 * j + 1].iter_mut().zip(&g) {
                *gb += gk;
            }
            if j > 0 {
                // input of layer j is tanh output of layer j-1
                g = (0..w.rows)
                    .map(|i| {
                        let row = &w.data[i * w.cols..(i + 1) * w.cols];
                        let s: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
                        s * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Actor: observation to a probability simplex over the N rungs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
}

/// Result of a loss evaluation on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Diagnostics of one actor batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats {
    pub objective: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl PolicyNet {
    pub fn new(obs_len: usize, hidden: &[usize], actions: usize, rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_len)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(actions))
            .collect();
        Ok(Self {
            mlp: Mlp::new(&sizes, 0.01, rng)?,
        })
    }

    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.mlp.forward(obs)?))
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64> {
        let p = self.probabilities(obs)?;
        p.get(action)
            .map(|x| x.ln())
            .ok_or(Error::OutOfRange {
                what: "action",
                index: action,
                limit: p.len(),
            })
    }

    /// Negated clipped surrogate plus entropy bonus, averaged over the batch,
    /// and its gradient.
    pub fn surrogate_loss(
        &self,
        observations: &[&[f64]],
        actions: &[usize],
        old_log_probs: &[f64],
        advantages: &[f64],
        clip_eps: f64,
        entropy_coef: f64,
    ) -> Result<(LossGrads, ActorStats)> {
        let n = observations.len();
        if n == 0 || actions.len() != n || old_log_probs.len() != n || advantages.len() != n {
            return Err(Error::Shape("actor batch fields must be aligned and non-empty".into()));
        }
        let mut passes = Vec::with_capacity(n);
        let mut new_lp = Vec::with_capacity(n);
        for (obs, &a) in observations.iter().zip(actions) {
            let (logits, cache) = self.mlp.forward_cached(obs)?;
            let p = softmax(&logits);
            if a >= p.len() {
                return Err(Error::OutOfRange {
                    what: "action",
                    index: a,
                    limit: p.len(),
                });
            }
            new_lp.push(p[a].ln());
            passes.push((p, cache));
        }
        let (objective, d_lp) = ppo_clip_objective(&new_lp, old_log_probs, advantages, clip_eps)?;
        let mut grads = self.mlp.params().zero_grads();
        let mut entropy = 0.0;
        let mut clipped = 0usize;
        let mut kl = 0.0;
        let inv_n = 1.0 / n as f64;
        for (s, (p, cache)) in passes.iter().enumerate() {
            let h: f64 = -p.iter().map(|x| if *x > 0.0 { x * x.ln() } else { 0.0 }).sum::<f64>();
            entropy += h * inv_n;
            let ratio = (new_lp[s] - old_log_probs[s]).exp();
            if (ratio - 1.0).abs() > clip_eps {
                clipped += 1;
            }
            kl += (old_log_probs[s] - new_lp[s]) * inv_n;
            // loss = -(J + c * H); d/dlogits
            let upstream: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let onehot = if j == actions[s] { 1.0 } else { 0.0 };
                    let d_obj = d_lp[s] * (onehot - pj);
                    let d_ent = if pj > 0.0 { -pj * (pj.ln() + h) } else { 0.0 };
                    -(d_obj + entropy_coef * inv_n * d_ent)
                })
                .collect();
            self.mlp.backward(cache, &upstream, &mut grads);
        }
        let loss = -(objective + entropy_coef * entropy);
        Ok((
            LossGrads { loss, grads },
            ActorStats {
                objective,
                entropy,
                clip_fraction: clipped as f64 * inv_n,
                approx_kl: kl,
            },
        ))
    }
}

/// Critic: state (global or local) to a scalar value.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub mlp: Mlp,
}

impl CriticNet {
    pub fn new(input_len: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(input_len)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Ok(Self {
            mlp: Mlp::new(&sizes, 1.0, rng)?,
        })
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.mlp.forward(input)?[0])
    }

    /// Mean squared error against `returns` and its gradient.
    pub fn loss(&self, inputs: &[&[f64]], returns: &[f64]) -> Result<LossGrads> {
        if inputs.is_empty() || inputs.len() != returns.len() {
            return Err(Error::Shape("critic batch fields must be aligned and non-empty".into()));
        }
        let inv_n = 1.0 / inputs.len() as f64;
        let mut grads = self.mlp.params().zero_grads();
        let mut values = Vec::with_capacity(inputs.len());
        for (x, g) in inputs.iter().zip(returns) {
            let (out, cache) = self.mlp.forward_cached(x)?;
            values.push(out[0]);
            self.mlp.backward(&cache, &[2.0 * (out[0] - g) * inv_n], &mut grads);
        }
        Ok(LossGrads {
            loss: critic_loss(&values, returns)?,
            grads,
        })
    }
}

/// `G_t = sum_{i=t}^{T-1} gamma^{i-t} r_i + gamma^{T-t} V(s_T)`.
pub fn discounted_returns(rewards: &[f64], bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    discounted_returns_with_dones(rewards, &vec![false; rewards.len()], bootstrap_value, gamma)
}

/// Discounted returns where `dones[t]` marks an episode ending after step
/// `t` (no bootstrapping across it).
pub fn discounted_returns_with_dones(rewards: &[f64], dones: &[bool], bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap_value;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

/// Truncated generalised advantage estimation.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    gae_with_dones(rewards, values, &vec![false; rewards.len()], bootstrap_value, gamma, lambda)
}

/// GAE across episode boundaries marked by `dones`.
pub fn gae_with_dones(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (bootstrap_value, 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry * running;
        adv[t] = running;
    }
    adv
}

/// `g(eps, A)`: `(1 + eps) A` for `A >= 0`, `(1 - eps) A` otherwise.
pub fn clip_target(eps: f64, advantage: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + eps) * advantage
    } else {
        (1.0 - eps) * advantage
    }
}

/// Mean over samples of `min(r A, g(eps, A))` with `r = exp(new - old)`,
/// and its gradient with respect to each new log-probability. The gradient
/// is zero where the clipped branch is strictly smaller.
pub fn ppo_clip_objective(
    new_log_probs: &[f64],
    old_log_probs: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = new_log_probs.len();
    if n == 0 || old_log_probs.len() != n || advantages.len() != n {
        return Err(Error::Shape("surrogate inputs must be aligned and non-empty".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("clip_eps", "epsilon must be >= 0"));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for ((new, old), &a) in new_log_probs.iter().zip(old_log_probs).zip(advantages) {
        let r = (new - old).exp();
        let (unclipped, clipped) = (r * a, clip_target(eps, a));
        if !(unclipped.is_finite() && clipped.is_finite()) {
            return Err(Error::NonFinite(format!("surrogate term r={r}, A={a}")));
        }
        total += unclipped.min(clipped);
        grad.push(if unclipped <= clipped { unclipped * inv_n } else { 0.0 });
    }
    Ok((total * inv_n, grad))
}

/// Mean of `(V - G)^2`.
pub fn critic_loss(values: &[f64], returns: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != returns.len() {
        return Err(Error::Shape("values and returns must be aligned and non-empty".into()));
    }
    Ok(values.iter().zip(returns).map(|(v, g)| (v - g) * (v - g)).sum::<f64>() / values.len() as f64)
}

/// Whether critics see the global state or only their own observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    Mappo,
    Ippo,
}

impl FromStr for CriticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mappo" => Ok(Self::Mappo),
            "ippo" => Ok(Self::Ippo),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected mappo or ippo)"))),
        }
    }
}

impl std::fmt::Display for CriticMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mappo => "mappo",
            Self::Ippo => "ippo",
        })
    }
}

/// Training hyperparameters. Minibatch size, epochs and the absence of
/// parameter sharing between agents are local choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Total training episodes.
    pub episodes: usize,
    /// Whole episodes collected per update.
    pub rollout_episodes: usize,
    pub entropy_coef: f64,
    /// When set, the entropy coefficient decays linearly from
    /// `entropy_coef` to this value over the training episodes.
    pub entropy_anneal_to: Option<f64>,
    /// Rewards are multiplied by this before computing returns.
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub mode: CriticMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            epochs: 4,
            minibatch: 64,
            episodes: 1000,
            rollout_episodes: 4,
            entropy_coef: 0.01,
            entropy_anneal_to: None,
            reward_scale: 1.0,
            hidden: vec![64, 64],
            mode: CriticMode::Mappo,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", "must be in [0, 1]"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::invalid("clip_eps", "must be > 0"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::invalid("learning rate", "must be > 0"));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_episodes == 0 {
            return Err(Error::invalid("epochs", "epochs, minibatch and rollout_episodes must be >= 1"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::invalid("reward_scale", "must be positive"));
        }
        Ok(())
    }
}

/// One agent's trajectory data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentRollout {
    pub observations: Vec<Vec<f64>>,
    pub critic_inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic estimate of the state after the last step (0 if it ended an
    /// episode).
    pub bootstrap_value: f64,
}

impl AgentRollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Rollout of all agents plus the logs of episodes finished during it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub agents: Vec<AgentRollout>,
    pub episodes: Vec<EpisodeLog>,
}

/// Aggregate statistics of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone)]
struct AgentNets {
    actor: PolicyNet,
    critic: CriticNet,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub mean_qoe: f64,
    pub terms: [f64; 4],
    pub freeze_frequency: f64,
}

impl CurveRow {
    fn from_log(episode: usize, log: &EpisodeLog) -> Self {
        let m = log.mean_breakdown();
        Self {
            episode,
            mean_qoe: m.total,
            terms: m.terms(),
            freeze_frequency: log.freeze_frequency(),
        }
    }
}

pub fn curve_to_text(rows: &[CurveRow]) -> String {
    let mut out = String::from("# episode mean_qoe q1 q2 q3 q4 freeze_freq\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            r.episode, r.mean_qoe, r.terms[0], r.terms[1], r.terms[2], r.terms[3], r.freeze_frequency
        );
    }
    out
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    /// Greedy evaluation score of the kept parameters.
    pub best_eval_qoe: f64,
    /// Episode count at which the kept parameters were reached.
    pub best_episode: usize,
    pub last_stats: UpdateStats,
}

/// The I actor-critic pairs and their optimisers.
#[derive(Debug, Clone)]
pub struct MultiAgentPpo {
    config: TrainConfig,
    agents: Vec<AgentNets>,
    obs_len: usize,
    rng: ChaCha8Rng,
    entropy_coef: f64,
}

impl MultiAgentPpo {
    pub fn new(config: TrainConfig, agents: usize, obs_len: usize, actions: usize) -> Result<Self> {
        config.validate()?;
        if agents == 0 || obs_len == 0 || actions == 0 {
            return Err(Error::invalid("agents", "agents, observation and action sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let config_entropy = config.entropy_coef;
        let critic_in = match config.mode {
            CriticMode::Mappo => agents * obs_len,
            CriticMode::Ippo => obs_len,
        };
        let nets = (0..agents)
            .map(|_| {
                Ok(AgentNets {
                    actor: PolicyNet::new(obs_len, &config.hidden, actions, &mut rng)?,
                    critic: CriticNet::new(critic_in, &config.hidden, &mut rng)?,
                    actor_opt: Adam::new(config.actor_lr),
                    critic_opt: Adam::new(config.critic_lr),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            agents: nets,
            obs_len,
            rng,
            entropy_coef: config_entropy,
        })
    }

    /// Sized for `env`'s agents, observation and ladder.
    pub fn for_env(config: TrainConfig, env: &StreamingEnv) -> Result<Self> {
        Self::new(config, env.num_agents(), env.config().observation_len(), env.num_rungs())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn actor(&self, agent: usize) -> &PolicyNet {
        &self.agents[agent].actor
    }

    pub fn critic(&self, agent: usize) -> &CriticNet {
        &self.agents[agent].critic
    }

    /// Input the critics receive for agent `agent`.
    pub fn critic_input(&self, observations: &[Vec<f64>], agent: usize) -> Vec<f64> {
        match self.config.mode {
            CriticMode::Mappo => observations.concat(),
            CriticMode::Ippo => observations[agent].clone(),
        }
    }

    fn check_observations(&self, observations: &[Vec<f64>]) -> Result<()> {
        if observations.len() != self.agents.len() || observations.iter().any(|o| o.len() != self.obs_len) {
            return Err(Error::Shape(format!(
                "expected {} observations of length {}",
                self.agents.len(),
                self.obs_len
            )));
        }
        Ok(())
    }

    /// Argmax action of every agent.
    pub fn act_greedy(&self, observations: &[Vec<f64>]) -> Result<Vec<usize>> {
        self.check_observations(observations)?;
        self.agents
            .iter()
            .zip(observations)
            .map(|(a, o)| Ok(crate::sphere::argmax(&a.actor.probabilities(o)?)))
            .collect()
    }

    /// Sampled action and its log-probability for every agent.
    pub fn act_sample(&mut self, observations: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
        self.check_observations(observations)?;
        let mut out = Vec::with_capacity(self.agents.len());
        for (i, o) in observations.iter().enumerate() {
            let p = self.agents[i].actor.probabilities(o)?;
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut choice = p.len() - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    choice = j;
                    break;
                }
            }
            out.push((choice, p[choice].ln()));
        }
        Ok(out)
    }

    /// Runs T steps from the environment's current state with sampled
    /// actions, resetting after each finished episode. The environment must
    /// have been reset.
    pub fn collect_rollout(&mut self, env: &mut StreamingEnv, steps: usize) -> Result<RolloutBuffer> {
        let n = self.agents.len();
        let mut buf = RolloutBuffer {
            agents: vec![AgentRollout::default(); n],
            episodes: Vec::new(),
        };
        if env.is_done() {
            env.reset()?;
        }
        let mut obs = env.observation_vectors();
        for _ in 0..steps {
            let picks = self.act_sample(&obs)?;
            let actions: Vec<usize> = picks.iter().map(|p| p.0).collect();
            for (i, (a, lp)) in picks.iter().enumerate() {
                let ci = self.critic_input(&obs, i);
                let v = self.agents[i].critic.value(&ci)?;
                let r = &mut buf.agents[i];
                r.observations.push(obs[i].clone());
                r.critic_inputs.push(ci);
                r.actions.push(*a);
                r.log_probs.push(*lp);
                r.values.push(v);
            }
            let out = env.step(&actions)?;
            for r in &mut buf.agents {
                r.rewards.push(out.reward);
                r.dones.push(out.done);
            }
            if out.done {
                buf.episodes.push(env.log().clone());
                obs = env.reset()?;
            } else {
                obs = out.observations;
            }
        }
        for i in 0..n {
            let last_done = buf.agents[i].dones.last().copied().unwrap_or(true);
            buf.agents[i].bootstrap_value = if last_done {
                0.0
            } else {
                let ci = self.critic_input(&obs, i);
                self.agents[i].critic.value(&ci)?
            };
        }
        Ok(buf)
    }

    /// Several epochs of minibatch PPO on every agent's data. Each agent's
    /// update reads and writes only that agent's networks.
    pub fn update(&mut self, buffer: &RolloutBuffer) -> Result<UpdateStats> {
        if buffer.agents.len() != self.agents.len() || buffer.agents.iter().any(|a| a.is_empty()) {
            return Err(Error::invalid("rollout", "one non-empty trajectory per agent required"));
        }
        let cfg = self.config.clone();
        let mut stats = UpdateStats::default();
        let mut batches = 0usize;
        for (i, data) in buffer.agents.iter().enumerate() {
            let rewards: Vec<f64> = data.rewards.iter().map(|r| r * cfg.reward_scale).collect();
            let mut adv = gae_with_dones(&rewards, &data.values, &data.dones, data.bootstrap_value, cfg.gamma, cfg.lambda);
            let returns = discounted_returns_with_dones(&rewards, &data.dones, data.bootstrap_value, cfg.gamma);
            normalize(&mut adv);
            let mut order: Vec<usize> = (0..data.len()).collect();
            for _ in 0..cfg.epochs {
                order.shuffle(&mut self.rng);
                for mb in order.chunks(cfg.minibatch) {
                    let obs: Vec<&[f64]> = mb.iter().map(|&s| data.observations[s].as_slice()).collect();
                    let acts: Vec<usize> = mb.iter().map(|&s| data.actions[s]).collect();
                    let old: Vec<f64> = mb.iter().map(|&s| data.log_probs[s]).collect();
                    let a: Vec<f64> = mb.iter().map(|&s| adv[s]).collect();
                    let net = &mut self.agents[i];
                    let (actor, astats) =
                        net.actor
                            .surrogate_loss(&obs, &acts, &old, &a, cfg.clip_eps, self.entropy_coef)?;
                    let cin: Vec<&[f64]> = mb.iter().map(|&s| data.critic_inputs[s].as_slice()).collect();
                    let g: Vec<f64> = mb.iter().map(|&s| returns[s]).collect();
                    let critic = net.critic.loss(&cin, &g)?;
                    let finite = |lg: &LossGrads| lg.loss.is_finite() && lg.grads.iter().flatten().all(|x| x.is_finite());
                    if !finite(&actor) || !finite(&critic) {
                        return Err(Error::NonFinite(format!(
                            "agent {i}: policy loss {}, value loss {}",
                            actor.loss, critic.loss
                        )));
                    }
                    net.actor_opt.step(net.actor.mlp.params_mut(), &actor.grads);
                    net.critic_opt.step(net.critic.mlp.params_mut(), &critic.grads);
                    stats.policy_loss += actor.loss;
                    stats.value_loss += critic.loss;
                    stats.entropy += astats.entropy;
                    stats.clip_fraction += astats.clip_fraction;
                    stats.approx_kl += astats.approx_kl;
                    batches += 1;
                }
            }
        }
        let k = batches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_fraction /= k;
        stats.approx_kl /= k;
        Ok(stats)
    }

    /// Mean QoE over one greedy episode on each environment.
    pub fn evaluate(&self, envs: &mut [StreamingEnv]) -> Result<(f64, Vec<EpisodeLog>)> {
        let mut logs = Vec::with_capacity(envs.len());
        for env in envs.iter_mut() {
            let mut obs = env.reset()?;
            while !env.is_done() {
                let a = self.act_greedy(&obs)?;
                obs = env.step(&a)?.observations;
            }
            logs.push(env.log().clone());
        }
        let mean = logs.iter().map(EpisodeLog::mean_qoe).sum::<f64>() / logs.len().max(1) as f64;
        Ok((mean, logs))
    }

    /// Collect/update cycles over `config.episodes` episodes; episode e runs
    /// on `envs[e % len]`. After every update the greedy policy is scored on
    /// `selection` and the best-scoring parameters are kept (and saved to
    /// `checkpoint` when given). The curve file gets one row per training
    /// episode.
    pub fn train(
        &mut self,
        envs: &mut [StreamingEnv],
        selection: &mut [StreamingEnv],
        curve_path: Option<&Path>,
        checkpoint: Option<&Path>,
    ) -> Result<TrainReport> {
        if envs.is_empty() || selection.is_empty() {
            return Err(Error::invalid("environments", "training and selection sets must be non-empty"));
        }
        let mut curve = Vec::with_capacity(self.config.episodes);
        let mut best = (f64::NEG_INFINITY, 0usize, self.agents.clone());
        let mut last_stats = UpdateStats::default();
        let mut episode = 0;
        while episode < self.config.episodes {
            let count = self.config.rollout_episodes.min(self.config.episodes - episode);
            let mut buffer = RolloutBuffer::default();
            for _ in 0..count {
                let env = &mut envs[episode % envs.len()];
                env.reset()?;
                let steps = env.total_segments();
                let part = self.collect_rollout(env, steps)?;
                merge(&mut buffer, part);
                curve.push(CurveRow::from_log(episode, buffer.episodes.last().expect("episode finished")));
                episode += 1;
            }
            if let Some(end) = self.config.entropy_anneal_to {
                let frac = episode as f64 / self.config.episodes as f64;
                self.entropy_coef = self.config.entropy_coef + (end - self.config.entropy_coef) * frac;
            }
            last_stats = self.update(&buffer)?;
            let (score, _) = self.evaluate(selection)?;
            if score > best.0 {
                best = (score, episode, self.agents.clone());
                if let Some(stem) = checkpoint {
                    self.save(stem)?;
                }
            }
        }
        if let Some(path) = curve_path {
            text::write_file(path, &curve_to_text(&curve))?;
        }
        self.agents = best.2;
        Ok(TrainReport {
            curve,
            best_eval_qoe: best.0,
            best_episode: best.1,
            last_stats,
        })
    }

    /// All networks as one parameter set (`actor{i}.` and `critic{i}.`
    /// prefixes).
    pub fn parameters(&self) -> ParamSet {
        let names: Vec<(String, String)> = (0..self.agents.len())
            .map(|i| (format!("actor{i}."), format!("critic{i}.")))
            .collect();
        let mut parts: Vec<(&str, &ParamSet)> = Vec::new();
        for (a, (pa, pc)) in self.agents.iter().zip(&names) {
            parts.push((pa, a.actor.mlp.params()));
            parts.push((pc, a.critic.mlp.params()));
        }
        ParamSet::merged(&parts)
    }

    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        self.parameters().save(stem)
    }

    /// Loads a checkpoint written by [`MultiAgentPpo::save`] for the same
    /// shapes.
    pub fn load(&mut self, stem: impl AsRef<Path>) -> Result<()> {
        let all = ParamSet::load(stem)?;
        for (i, a) in self.agents.iter_mut().enumerate() {
            a.actor.mlp.params_mut().assign(&all.extract(&format!("actor{i}.")))?;
            a.critic.mlp.params_mut().assign(&all.extract(&format!("critic{i}.")))?;
        }
        Ok(())
    }
}

impl AbrPolicy for MultiAgentPpo {
    fn name(&self) -> &str {
        match self.config.mode {
            CriticMode::Mappo => "mappo",
            CriticMode::Ippo => "ippo",
        }
    }

    fn decide(&mut self, env: &StreamingEnv) -> Result<Decision> {
        Ok(Decision::regions(self.act_greedy(&env.observation_vectors())?))
    }
}

fn merge(into: &mut RolloutBuffer, part: RolloutBuffer) {
    if into.agents.is_empty() {
        *into = part;
        return;
    }
    for (dst, src) in into.agents.iter_mut().zip(part.agents) {
        dst.observations.extend(src.observations);
        dst.critic_inputs.extend(src.critic_inputs);
        dst.actions.extend(src.actions);
        dst.log_probs.extend(src.log_probs);
        dst.values.extend(src.values);
        dst.rewards.extend(src.rewards);
        dst.dones.extend(src.dones);
        dst.bootstrap_value = src.bootstrap_value;
    }
    into.episodes.extend(part.episodes);
}

fn normalize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_actor_is_uniform_and_deterministic() {
        let mut net = PolicyNet::new(5, &[8], 4, &mut rng(1)).unwrap();
        for t in net.mlp.params_mut().tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = net.probabilities(&[0.3; 5]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-12));
        let critic = CriticNet::new(5, &[8], &mut rng(2)).unwrap();
        assert_eq!(critic.mlp.forward(&[0.1; 5]).unwrap().len(), 1);
        assert_eq!(critic.value(&[0.1; 5]).unwrap(), critic.value(&[0.1; 5]).unwrap());
    }

    #[test]
    fn mlp_backward_is_linear() {
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng(3)).unwrap();
        let (_, c1) = net.forward_cached(&[0.1, -0.2, 0.3]).unwrap();
        let (_, c2) = net.forward_cached(&[0.5, 0.0, -1.0]).unwrap();
        let mut zero = net.params().zero_grads();
        net.backward(&c1, &[0.0, 0.0], &mut zero);
        assert!(zero.iter().flatten().all(|g| *g == 0.0));
        let mut both = net.params().zero_grads();
        net.backward(&c1, &[1.0, -2.0], &mut both);
        net.backward(&c2, &[1.0, -2.0], &mut both);
        let mut a = net.params().zero_grads();
        net.backward(&c1, &[1.0, -2.0], &mut a);
        let mut b = net.params().zero_grads();
        net.backward(&c2, &[1.0, -2.0], &mut b);
        for ((s, x), y) in both.iter().flatten().zip(a.iter().flatten()).zip(b.iter().flatten()) {
            assert!((s - x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn returns_hand_cases() {
        let g = discounted_returns(&[1.0, 1.0], 2.0, 0.5);
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert_eq!(discounted_returns(&[3.5], 0.0, 0.7), vec![3.5]);
        assert_eq!(discounted_returns(&[1.0; 5], 0.0, 1.0)[0], 5.0);
        let g = discounted_returns_with_dones(&[1.0, 1.0, 1.0], &[false, true, false], 10.0, 1.0);
        assert_eq!(g, vec![2.0, 1.0, 11.0]);
    }

    #[test]
    fn gae_limits() {
        let r = [1.0, -0.5, 2.0, 0.3];
        let v = [0.2, 0.1, -0.3, 0.4];
        let a = gae(&r, &v, 0.7, 0.9, 0.0);
        for t in 0..4 {
            let next = if t + 1 < 4 { v[t + 1] } else { 0.7 };
            assert!((a[t] - (r[t] + 0.9 * next - v[t])).abs() < 1e-12);
        }
        let a = gae(&r, &[0.0; 4], 0.0, 0.9, 1.0);
        let g = discounted_returns(&r, 0.0, 0.9);
        for t in 0..4 {
            assert!((a[t] - g[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_hand_cases() {
        let (j, _) = ppo_clip_objective(&[1.5f64.ln()], &[0.0], &[1.0], 0.2).unwrap();
        assert!((j - 1.2).abs() < 1e-12);
        let (j, _) = ppo_clip_objective(&[0.5f64.ln()], &[0.0], &[-1.0], 0.2).unwrap();
        assert!((j + 0.8).abs() < 1e-12);
        let (j, _) = ppo_clip_objective(&[0.3], &[0.3], &[-2.5], 0.2).unwrap();
        assert!((j + 2.5).abs() < 1e-12);
        assert!((critic_loss(&[3.0], &[1.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!((critic_loss(&[1.5, 2.5], &[1.0, 2.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clip_objective_gradient_matches_finite_differences() {
        let mut r = rng(4);
        for _ in 0..50 {
            let n = 6;
            let new: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..0.0)).collect();
            let old: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..0.0)).collect();
            let adv: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let (_, g) = ppo_clip_objective(&new, &old, &adv, 0.2).unwrap();
            for i in 0..n {
                let h = 1e-7;
                let mut up = new.clone();
                up[i] += h;
                let mut dn = new.clone();
                dn[i] -= h;
                let fd = (ppo_clip_objective(&up, &old, &adv, 0.2).unwrap().0
                    - ppo_clip_objective(&dn, &old, &adv, 0.2).unwrap().0)
                    / (2.0 * h);
                let ratio = (new[i] - old[i]).exp();
                // skip points sitting on a kink
                if ((ratio - 1.2).abs() > 1e-5) && ((ratio - 0.8).abs() > 1e-5) {
                    assert!((fd - g[i]).abs() < 1e-6, "fd {fd} vs {}", g[i]);
                }
            }
        }
    }

    fn fd_check(params: &mut ParamSet, analytic: &[Vec<f64>], loss: &mut dyn FnMut(&ParamSet) -> f64) -> f64 {
        let flat: Vec<f64> = analytic.iter().flatten().copied().collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.num_scalars() {
            let x = params.scalar(i);
            params.set_scalar(i, x + h);
            let up = loss(params);
            params.set_scalar(i, x - h);
            let down = loss(params);
            params.set_scalar(i, x);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - flat[i]).abs() / fd.abs().max(flat[i].abs()).max(1e-6));
        }
        worst
    }

    #[test]
    fn actor_and_critic_gradients() {
        let mut r = rng(5);
        let actor = PolicyNet::new(6, &[10, 8], 4, &mut r).unwrap();
        let obs: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let views: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
        let acts = [0, 3, 1, 2, 3];
        let old: Vec<f64> = acts.iter().zip(&obs).map(|(&a, o)| actor.log_prob(o, a).unwrap() + 0.05).collect();
        let adv = [0.5, -1.0, 1.5, -0.2, 0.9];
        let (lg, _) = actor.surrogate_loss(&views, &acts, &old, &adv, 0.2, 0.01).unwrap();
        let mut probe = actor.clone();
        let mut params = probe.mlp.params().clone();
        let worst = fd_check(&mut params, &lg.grads, &mut |p| {
            *probe.mlp.params_mut() = p.clone();
            probe.surrogate_loss(&views, &acts, &old, &adv, 0.2, 0.01).unwrap().0.loss
        });
        assert!(worst < 1e-4, "actor {worst}");

        let critic = CriticNet::new(6, &[10, 8], &mut r).unwrap();
        let ret = [1.0, -2.0, 0.5, 3.0, 0.0];
        let lg = critic.loss(&views, &ret).unwrap();
        let mut probe = critic.clone();
        let mut params = probe.mlp.params().clone();
        let worst = fd_check(&mut params, &lg.grads, &mut |p| {
            *probe.mlp.params_mut() = p.clone();
            probe.loss(&views, &ret).unwrap().loss
        });
        assert!(worst < 1e-4, "critic {worst}");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("MAPPO".parse::<CriticMode>().unwrap(), CriticMode::Mappo);
        assert_eq!("ippo".parse::<CriticMode>().unwrap(), CriticMode::Ippo);
        assert!("a3c".parse::<CriticMode>().is_err());
        let bad = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
