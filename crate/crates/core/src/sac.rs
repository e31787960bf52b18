//! Discrete soft actor-critic.
//!
//! The actor emits log-probabilities over the ladder. Two Q networks (each
//! with a polyak-averaged target copy) estimate per-action values; targets use
//! the minimum of the twin target networks and the exact expectation over the
//! discrete action set. The entropy temperature is tuned toward a target
//! entropy by plain gradient steps on the temperature itself.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Session, SessionConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, NetParams, NetSpec, OutputHead};
use crate::quality::QualityModel;
use crate::trace::NetworkTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Reward discount.
    pub discount: f64,
    /// Polyak coefficient for the target networks.
    pub target_tau: f64,
    pub beta_init: f64,
    pub beta_lr: f64,
    /// Tune the temperature toward `target_entropy`; otherwise it stays fixed.
    pub auto_beta: bool,
    pub beta_min: f64,
    pub beta_max: f64,
    pub target_entropy: f64,
    /// Replace `target_entropy` with `0.98 · ln(actions)` at agent creation.
    pub entropy_from_formula: bool,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Environment steps (chunks) to train for.
    pub train_steps: usize,
    /// Evaluate every this many environment steps.
    pub eval_interval: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            discount: 0.99,
            target_tau: 0.005,
            beta_init: 0.2,
            beta_lr: 3e-4,
            auto_beta: true,
            beta_min: 1e-4,
            beta_max: 10.0,
            target_entropy: 1.78,
            entropy_from_formula: false,
            replay_capacity: 100_000,
            batch_size: 64,
            warmup_steps: 1000,
            train_steps: 120_000,
            eval_interval: 5000,
            hidden: vec![128, 128],
        }
    }
}

impl SacConfig {
    /// `0.98 · ln(actions)`, the rule the shipped target entropy is based on.
    pub fn entropy_target_formula(actions: usize) -> f64 {
        0.98 * (actions as f64).ln()
    }

    pub fn validate(&self, actions: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sac: {m}")));
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.target_tau > 0.0 && self.target_tau <= 1.0) {
            return bad("target_tau must lie in (0, 1]");
        }
        if !(self.beta_init > 0.0) || !(self.beta_min > 0.0) || self.beta_max < self.beta_min {
            return bad("temperature bounds must be positive and ordered");
        }
        if self.target_entropy > (actions as f64).ln() + 1e-12 {
            return bad("target entropy exceeds ln(actions)");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.beta_lr >= 0.0) {
            return bad("learning rates must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let n = items.len();
        if n == 0 {
            return Err(Error::Policy("empty batch".into()));
        }
        let dim = items[0].state.len();
        let mut states = Array2::zeros((n, dim));
        let mut next_states = Array2::zeros((n, dim));
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != dim || t.next_state.len() != dim {
                return Err(Error::Policy("ragged transition states".into()));
            }
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state[..]));
            next_states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&t.next_state[..]));
        }
        Ok(Self {
            states,
            actions: items.iter().map(|t| t.action).collect(),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Fixed-capacity ring buffer; batches are drawn uniformly without
/// replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 || batch_size > self.items.len() {
            return Err(Error::Policy(format!(
                "cannot sample {batch_size} from {} transitions",
                self.items.len()
            )));
        }
        let picks = index::sample(&mut self.rng, self.items.len(), batch_size);
        let refs: Vec<&Transition> = picks.iter().map(|i| &self.items[i]).collect();
        Batch::from_transitions(&refs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: (f64, f64),
    pub actor_loss: f64,
    pub entropy: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: NetParams,
    pub q1: NetParams,
    pub q2: NetParams,
    pub q1_target: NetParams,
    pub q2_target: NetParams,
    pub beta: f64,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    /// Gradient updates performed so far.
    pub updates: u64,
}

fn argmax_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl SacAgent {
    pub fn new(obs_dim: usize, actions: usize, mut config: SacConfig, seed: u64) -> Result<Self> {
        if config.entropy_from_formula {
            config.target_entropy = SacConfig::entropy_target_formula(actions);
        }
        config.validate(actions)?;
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(actions);
        let actor_spec = NetSpec::new(sizes.clone(), OutputHead::LogSoftmax);
        let q_spec = NetSpec::new(sizes, OutputHead::Linear);
        let actor = NetParams::init(&actor_spec, seed)?;
        let q1 = NetParams::init(&q_spec, seed.wrapping_add(1))?;
        let q2 = NetParams::init(&q_spec, seed.wrapping_add(2))?;
        Ok(Self {
            actor_opt: Adam::new(&actor, config.actor_lr),
            q1_opt: Adam::new(&q1, config.critic_lr),
            q2_opt: Adam::new(&q2, config.critic_lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            beta: config.beta_init,
            config,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec.input_len()
    }

    pub fn action_count(&self) -> usize {
        self.actor.spec.output_len()
    }

    /// Action probabilities for one state.
    pub fn policy(&self, state: &[f64]) -> Result<Vec<f64>> {
        let logp = self.actor.forward(state)?;
        check_finite(logp.iter().copied(), "actor output")?;
        Ok(logp.iter().map(|l| l.exp()).collect())
    }

    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], mode: ActionMode, rng: &mut R) -> Result<usize> {
        let probs = self.policy(state)?;
        Ok(match mode {
            ActionMode::Greedy => argmax_low(&probs),
            ActionMode::Stochastic => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        })
    }

    /// Soft Bellman targets `r + γ(1−done) Σ_a π(a|s')(min Q̄(s',a) − β log π(a|s'))`.
    pub fn critic_target(&self, batch: &Batch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Policy("empty batch".into()));
        }
        let logp = self.actor.forward_batch(&batch.next_states)?;
        let t1 = self.q1_target.forward_batch(&batch.next_states)?;
        let t2 = self.q2_target.forward_batch(&batch.next_states)?;
        let (logp, t1, t2) = (logp.output(), t1.output(), t2.output());
        let gamma = self.config.discount;
        let targets: Vec<f64> = (0..batch.len())
            .map(|i| {
                if batch.dones[i] || gamma == 0.0 {
                    return batch.rewards[i];
                }
                let value: f64 = (0..logp.ncols())
                    .map(|a| {
                        let l = logp[[i, a]];
                        l.exp() * (t1[[i, a]].min(t2[[i, a]]) - self.beta * l)
                    })
                    .sum();
                batch.rewards[i] + gamma * value
            })
            .collect();
        check_finite(targets.iter().copied(), "critic target")?;
        Ok(targets)
    }

    /// One Adam step on each Q network against the (constant) soft targets.
    /// Returns the two mean half-squared errors before the step.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let targets = self.critic_target(batch)?;
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, loss) in losses.iter_mut().enumerate() {
            let (net, opt) = if k == 0 {
                (&mut self.q1, &mut self.q1_opt)
            } else {
                (&mut self.q2, &mut self.q2_opt)
            };
            let cache = net.forward_batch(&batch.states)?;
            let q = cache.output();
            let mut grad = Array2::zeros(q.dim());
            for (i, (&a, &y)) in batch.actions.iter().zip(&targets).enumerate() {
                let err = q[[i, a]] - y;
                *loss += 0.5 * err * err / n;
                grad[[i, a]] = err / n;
            }
            check_finite([*loss], "critic loss")?;
            let grads = net.backward(&cache, &grad)?;
            opt.step(net, &grads)?;
        }
        Ok((losses[0], losses[1]))
    }

    /// One Adam step on `E_s Σ_a π(a|s)(β log π(a|s) − min Q(s,a))`.
    /// Returns the loss and mean policy entropy before the step.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let cache = self.actor.forward_batch(&batch.states)?;
        let q1 = self.q1.forward_batch(&batch.states)?;
        let q2 = self.q2.forward_batch(&batch.states)?;
        let (logp, q1, q2) = (cache.output(), q1.output(), q2.output());
        let n = batch.len() as f64;
        let beta = self.beta;
        let mut grad = Array2::zeros(logp.dim());
        let mut loss = 0.0;
        let mut entropy = 0.0;
        for i in 0..batch.len() {
            for a in 0..logp.ncols() {
                let l = logp[[i, a]];
                let p = l.exp();
                let q = q1[[i, a]].min(q2[[i, a]]);
                loss += p * (beta * l - q) / n;
                entropy -= p * l / n;
                grad[[i, a]] = p * (beta * l - q + beta) / n;
            }
        }
        check_finite([loss, entropy], "actor loss")?;
        let grads = self.actor.backward(&cache, &grad)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok((loss, entropy))
    }

    /// `β ← clamp(β − lr·(H − H0))`; a no-op when tuning is disabled.
    pub fn beta_update(&mut self, mean_entropy: f64) -> f64 {
        if self.config.auto_beta {
            let next = self.beta - self.config.beta_lr * (mean_entropy - self.config.target_entropy);
            self.beta = next.clamp(self.config.beta_min, self.config.beta_max);
        }
        self.beta
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.config.target_tau;
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let critic_loss = self.critic_update(batch)?;
        let (actor_loss, entropy) = self.actor_update(batch)?;
        let beta = self.beta_update(entropy);
        self.soft_update_targets();
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            entropy,
            beta,
        })
    }

    /// Writes the five networks plus `agent.toml` into `dir`.
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in self.networks() {
            let path = dir.join(format!("{name}.ckpt"));
            std::fs::write(&path, net.to_checkpoint(self.updates)).map_err(|e| Error::io(&path, e))?;
        }
        let meta = AgentMeta {
            beta: self.beta,
            updates: self.updates,
            config_hash: config_hash.to_string(),
            config: self.config.clone(),
        };
        let path = dir.join("agent.toml");
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<NetParams> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(NetParams::from_checkpoint(&text)?.0)
        };
        let path = dir.join("agent.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: AgentMeta = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let actor = read("actor.ckpt")?;
        let q1 = read("q1.ckpt")?;
        let q2 = read("q2.ckpt")?;
        Ok(Self {
            actor_opt: Adam::new(&actor, meta.config.actor_lr),
            q1_opt: Adam::new(&q1, meta.config.critic_lr),
            q2_opt: Adam::new(&q2, meta.config.critic_lr),
            q1_target: read("q1_target.ckpt")?,
            q2_target: read("q2_target.ckpt")?,
            actor,
            q1,
            q2,
            beta: meta.beta,
            config: meta.config,
            updates: meta.updates,
        })
    }

    fn networks(&self) -> [(&'static str, &NetParams); 5] {
        [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentMeta {
    beta: f64,
    updates: u64,
    config_hash: String,
    config: SacConfig,
}

/// Episodic environment driven by the training loop.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// Returns `(next_state, reward, done)`.
    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)>;
}

/// Streaming sessions on randomly chosen traces and start offsets.
pub struct StreamingEnv {
    config: SessionConfig,
    quality: Arc<QualityModel>,
    traces: Vec<Arc<NetworkTrace>>,
    session: Option<Session>,
}

impl StreamingEnv {
    pub fn new(config: SessionConfig, quality: Arc<QualityModel>, traces: Vec<Arc<NetworkTrace>>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Config("training needs at least one trace".into()));
        }
        config.validate()?;
        Ok(Self {
            config,
            quality,
            traces,
            session: None,
        })
    }
}

impl Environment for StreamingEnv {
    fn observation_dim(&self) -> usize {
        self.config.observation_len(self.quality.levels())
    }

    fn action_count(&self) -> usize {
        self.quality.levels()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let trace = self.traces[rng.random_range(0..self.traces.len())].clone();
        let offset = rng.random_range(0.0..trace.duration());
        let seed = rng.random();
        let (session, obs) = Session::reset(self.config.clone(), self.quality.clone(), trace, offset, seed)?;
        self.session = Some(session);
        Ok(obs.to_vector())
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| Error::Policy("step before reset".into()))?;
        let r = session.step(action)?;
        Ok((r.observation.to_vector(), r.reward, r.done))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub eval_qoe: f64,
    /// Mean actor entropy over the updates since the previous point.
    pub entropy: f64,
    pub beta: f64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,eval_qoe,entropy,beta\n");
    for p in curve {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            p.step, p.eval_qoe, p.entropy, p.beta
        ));
    }
    out
}

/// Per-update hook for instrumentation; receives the env step and stats.
pub type UpdateHook<'a> = &'a mut dyn FnMut(usize, &UpdateStats);

/// Off-policy training loop: one gradient update per environment step once
/// the replay buffer holds `warmup_steps` transitions, and a call to
/// `evaluate` every `eval_interval` steps.
pub fn train(
    agent: &mut SacAgent,
    env: &mut dyn Environment,
    evaluate: &mut dyn FnMut(&SacAgent) -> Result<f64>,
    seed: u64,
    mut on_update: Option<UpdateHook<'_>>,
) -> Result<Vec<CurvePoint>> {
    if env.observation_dim() != agent.obs_dim() || env.action_count() != agent.action_count() {
        return Err(Error::Config("agent and environment dimensions differ".into()));
    }
    let cfg = agent.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, seed ^ 0x5eed_5eed);
    let mut state: Option<Vec<f64>> = None;
    let mut curve = Vec::new();
    let (mut entropy_sum, mut entropy_n) = (0.0, 0usize);
    let start = cfg.warmup_steps.max(cfg.batch_size);
    for step in 1..=cfg.train_steps {
        let s = match state.take() {
            Some(s) => s,
            None => env.reset(&mut rng)?,
        };
        let action = agent.select_action(&s, ActionMode::Stochastic, &mut rng)?;
        let (next, reward, done) = env.step(action)?;
        replay.push(Transition {
            state: s,
            action,
            reward,
            next_state: next.clone(),
            done,
        });
        if !done {
            state = Some(next);
        }
        if replay.len() >= start {
            let batch = replay.sample(cfg.batch_size)?;
            let stats = agent.update(&batch)?;
            entropy_sum += stats.entropy;
            entropy_n += 1;
            if let Some(hook) = on_update.as_mut() {
                hook(step, &stats);
            }
        }
        if step % cfg.eval_interval == 0 {
            let eval_qoe = evaluate(agent)?;
            curve.push(CurvePoint {
                step,
                eval_qoe,
                entropy: if entropy_n > 0 {
                    entropy_sum / entropy_n as f64
                } else {
                    f64::NAN
                },
                beta: agent.beta,
            });
            entropy_sum = 0.0;
            entropy_n = 0;
        }
    }
    Ok(curve)
}

/// One-state environment with fixed per-action rewards; every step ends
/// the episode.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub rewards: Vec<f64>,
}

impl Environment for BanditEnv {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_count(&self) -> usize {
        self.rewards.len()
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let r = *self
            .rewards
            .get(action)
            .ok_or_else(|| Error::Policy(format!("bandit action {action} out of range")))?;
        Ok((vec![1.0], r, true))
    }
}
