use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::a2c::{a2c_update, actor_dims, A2cAgent, Transition};
use super::cartpole::{CartPole, CartPoleParams};
use super::memory::{
    build_proxy_memory, merge_global, ClusterConfig, DistillSource, MergeWeighting,
    RawExperienceMemory,
};
use crate::fd::FloatWidth;
use crate::nn::{fedavg, loss_and_grad, LossKind};
use crate::seed::{self, Rng};
use crate::stats::mean;
use crate::{Error, Result};

const ROLLING_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrlScheme {
    /// Raw experience memories up, concatenated global memory down.
    Pd,
    /// Proxy memories up and down.
    Frd,
    /// FedAvg over actor weights.
    Frl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub score: f64,
    pub window: usize,
}

impl Default for Mission {
    fn default() -> Self {
        Mission { score: 490.0, window: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrlConfig {
    pub scheme: DrlScheme,
    pub agents: usize,
    pub episodes: usize,
    pub exchange_interval: usize,
    pub subspaces: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_eta: f64,
    pub critic_eta: f64,
    pub discount: f64,
    /// Transitions per A2C update.
    pub update_every: usize,
    pub distill_eta: f64,
    pub distill_epochs: usize,
    pub float_width: FloatWidth,
    pub weighting: MergeWeighting,
    pub mission: Option<Mission>,
    pub env: CartPoleParams,
    pub seed: u64,
}

impl Default for DrlConfig {
    fn default() -> Self {
        DrlConfig {
            scheme: DrlScheme::Frd,
            agents: 2,
            episodes: 500,
            exchange_interval: 25,
            subspaces: 30,
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            actor_eta: 0.002,
            critic_eta: 0.01,
            discount: 0.99,
            update_every: 5,
            distill_eta: 0.001,
            distill_epochs: 1,
            float_width: FloatWidth::F32,
            weighting: MergeWeighting::Unweighted,
            mission: Some(Mission::default()),
            env: CartPoleParams::default(),
            seed: 0,
        }
    }
}

impl DrlConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("agents", self.agents),
            ("exchange_interval", self.exchange_interval),
            ("subspaces", self.subspaces),
            ("update_every", self.update_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        for (name, hidden) in [("actor_hidden", &self.actor_hidden), ("critic_hidden", &self.critic_hidden)] {
            if hidden.contains(&0) {
                return Err(Error::validation(name, "hidden widths must be positive"));
            }
        }
        for (name, v) in [
            ("actor_eta", self.actor_eta),
            ("critic_eta", self.critic_eta),
            ("distill_eta", self.distill_eta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be non-negative and finite"));
            }
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::validation("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig::cartpole(self.subspaces)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeReport {
    pub exchange: usize,
    pub agent: usize,
    pub rolling_score: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct DrlRun {
    pub reports: Vec<ExchangeReport>,
    /// Per agent, one score per episode played.
    pub scores: Vec<Vec<f64>>,
    /// Episode count at which the mission rule was met.
    pub completed_at: Option<usize>,
    pub agents: Vec<A2cAgent>,
}

impl DrlRun {
    /// Agent-averaged mean score over episodes `range`.
    pub fn mean_score(&self, range: std::ops::Range<usize>) -> f64 {
        mean(&self.scores.iter().map(|s| mean(&s[range.clone()])).collect::<Vec<_>>())
    }
}

fn rolling(scores: &[f64], window: usize) -> f64 {
    mean(&scores[scores.len().saturating_sub(window)..])
}

/// Plays one episode with online A2C updates every `update_every` steps,
/// recording `(state, policy)` at each decision.
pub fn play_episode(
    agent: &mut A2cAgent,
    env: &mut CartPole,
    memory: &mut RawExperienceMemory,
    cfg: &DrlConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut state = env.reset(rng);
    let mut chunk: Vec<Transition> = Vec::with_capacity(cfg.update_every);
    let mut score = 0.0;
    loop {
        let (action, policy) = agent.act(&state, rng)?;
        memory.push(state, policy);
        let step = env.step(action)?;
        score += step.reward;
        chunk.push(Transition {
            state,
            action,
            reward: step.reward,
            next_state: step.state,
            terminal: step.terminated,
        });
        if chunk.len() == cfg.update_every || step.done() {
            a2c_update(agent, &chunk, cfg.actor_eta, cfg.critic_eta)?;
            chunk.clear();
        }
        if step.done() {
            return Ok(score);
        }
        state = step.state;
    }
}

/// Per-sample cross-entropy descent toward the memory's policies.
pub fn distill(
    agent: &mut A2cAgent,
    memory: &impl DistillSource,
    epochs: usize,
    eta: f64,
    rng: &mut Rng,
) -> Result<()> {
    let targets = memory.targets();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &k in &order {
            let (s, policy) = &targets[k];
            let (_, d) = loss_and_grad(LossKind::cross_entropy(), &agent.actor.predict(s)?, policy)?;
            let g = agent.actor.gradient_from_output(s, &d, None)?;
            agent.actor.sgd_step(&g, eta)?;
        }
    }
    Ok(())
}

struct AgentSlot {
    agent: A2cAgent,
    env: CartPole,
    memory: RawExperienceMemory,
    scores: Vec<f64>,
}

pub fn run_drl(cfg: &DrlConfig) -> Result<DrlRun> {
    cfg.validate()?;
    let clusters = cfg.cluster_config();
    let fw = cfg.float_width.bytes();
    let mut slots: Vec<AgentSlot> = (0..cfg.agents)
        .map(|c| {
            let init = seed::derive(cfg.seed, "agent-init", c as u64, 0);
            Ok(AgentSlot {
                agent: A2cAgent::new(&cfg.actor_hidden, &cfg.critic_hidden, cfg.discount, init)?,
                env: CartPole::new(cfg.env),
                memory: RawExperienceMemory::default(),
                scores: Vec::with_capacity(cfg.episodes),
            })
        })
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut completed_at = None;
    let mut played = 0;
    let mut exchange = 0;
    while played < cfg.episodes {
        let block = cfg.exchange_interval.min(cfg.episodes - played);
        slots
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(c, slot)| -> Result<()> {
                slot.memory = RawExperienceMemory::default();
                for e in played..played + block {
                    let mut rng = seed::stream(cfg.seed, "episode", c as u64, e as u64);
                    let score = play_episode(&mut slot.agent, &mut slot.env, &mut slot.memory, cfg, &mut rng)?;
                    slot.scores.push(score);
                }
                Ok(())
            })?;
        played += block;
        if let Some(m) = cfg.mission {
            let recent = mean(&slots.iter().map(|s| rolling(&s.scores, m.window)).collect::<Vec<_>>());
            if played >= m.window && recent >= m.score {
                completed_at = Some(played);
            }
        }
        if block == cfg.exchange_interval {
            exchange += 1;
            let payloads = exchange_round(&mut slots, cfg, &clusters, exchange)?;
            for (c, (slot, (up, down))) in slots.iter().zip(payloads).enumerate() {
                reports.push(ExchangeReport {
                    exchange,
                    agent: c,
                    rolling_score: rolling(&slot.scores, ROLLING_WINDOW),
                    uplink_bytes: up * fw,
                    downlink_bytes: down * fw,
                });
            }
        }
        if completed_at.is_some() {
            break;
        }
    }
    Ok(DrlRun {
        reports,
        scores: slots.iter().map(|s| s.scores.clone()).collect(),
        completed_at,
        agents: slots.into_iter().map(|s| s.agent).collect(),
    })
}

/// Runs one exchange; returns per-agent (uplink, downlink) payloads in
/// float-width units.
fn exchange_round(
    slots: &mut [AgentSlot],
    cfg: &DrlConfig,
    clusters: &ClusterConfig,
    exchange: usize,
) -> Result<Vec<(u64, u64)>> {
    match cfg.scheme {
        DrlScheme::Pd => {
            let locals: Vec<RawExperienceMemory> = slots.iter().map(|s| s.memory.clone()).collect();
            let global = RawExperienceMemory::concat(&locals);
            let down = global.payload_bytes(1);
            slots.par_iter_mut().enumerate().try_for_each(|(c, s)| {
                let mut rng = seed::stream(cfg.seed, "distill", c as u64, exchange as u64);
                distill(&mut s.agent, &global, cfg.distill_epochs, cfg.distill_eta, &mut rng)
            })?;
            Ok(locals.iter().map(|m| (m.payload_bytes(1), down)).collect())
        }
        DrlScheme::Frd => {
            let locals: Vec<_> = slots.iter().map(|s| build_proxy_memory(&s.memory, clusters)).collect();
            let global = merge_global(&locals, cfg.weighting)?;
            let down = global.payload_bytes(1);
            slots.par_iter_mut().enumerate().try_for_each(|(c, s)| {
                let mut rng = seed::stream(cfg.seed, "distill", c as u64, exchange as u64);
                distill(&mut s.agent, &global, cfg.distill_epochs, cfg.distill_eta, &mut rng)
            })?;
            Ok(locals.iter().map(|m| (m.payload_bytes(1), down)).collect())
        }
        DrlScheme::Frl => {
            let actors: Vec<_> = slots.iter().map(|s| s.agent.actor.clone()).collect();
            let global = fedavg(&actors)?;
            let size = global.param_count() as u64;
            for s in slots.iter_mut() {
                s.agent.actor = global.clone();
            }
            Ok(vec![(size, size); slots.len()])
        }
    }
}

/// Per-agent payloads of PD and FRD computed from the same raw memories:
/// `(pd_up, pd_down, frd_up, frd_down)` in bytes.
pub fn matched_payloads(
    memories: &[RawExperienceMemory],
    clusters: &ClusterConfig,
    weighting: MergeWeighting,
    float_width: FloatWidth,
) -> Result<Vec<(u64, u64, u64, u64)>> {
    let fw = float_width.bytes();
    let pd_down = RawExperienceMemory::concat(memories).payload_bytes(fw);
    let proxies: Vec<_> = memories.iter().map(|m| build_proxy_memory(m, clusters)).collect();
    let frd_down = merge_global(&proxies, weighting)?.payload_bytes(fw);
    Ok(memories
        .iter()
        .zip(&proxies)
        .map(|(m, p)| (m.payload_bytes(fw), pd_down, p.payload_bytes(fw), frd_down))
        .collect())
}

/// FRL payload per direction for an actor with the given hidden widths.
pub fn frl_payload_bytes(actor_hidden: &[usize], float_width: FloatWidth) -> u64 {
    crate::nn::param_count(&actor_dims(actor_hidden)) as u64 * float_width.bytes()
}
