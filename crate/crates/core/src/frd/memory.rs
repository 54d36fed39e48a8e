use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::a2c::ACTIONS;
use super::cartpole::State;
use crate::nn::{loss_and_grad, LossKind, Mlp};
use crate::{Error, Result};

/// Even grid of `subspaces` bins per state dimension over fixed ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub subspaces: usize,
    pub ranges: [(f64, f64); 4],
}

impl ClusterConfig {
    /// Position ±2.4, velocity ±3, angle ±24°, angular velocity ±3.5.
    pub fn cartpole(subspaces: usize) -> Self {
        let angle = 24f64.to_radians();
        ClusterConfig {
            subspaces,
            ranges: [(-2.4, 2.4), (-3.0, 3.0), (-angle, angle), (-3.5, 3.5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspaces == 0 {
            return Err(Error::validation("subspaces", "must be positive"));
        }
        if self.ranges.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::validation("ranges", "every range needs lo < hi"));
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> u64 {
        (self.subspaces as u64).pow(4)
    }

    fn bin(&self, dim: usize, v: f64) -> usize {
        let (lo, hi) = self.ranges[dim];
        let s = self.subspaces;
        let pos = ((v - lo) / (hi - lo) * s as f64).floor();
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(s - 1)
        }
    }

    fn midpoint(&self, dim: usize, bin: usize) -> f64 {
        let (lo, hi) = self.ranges[dim];
        lo + (bin as f64 + 0.5) * (hi - lo) / self.subspaces as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyState {
    pub id: u64,
    pub representative: State,
}

/// Half-open bins, clamped at the range ends; id is mixed-radix over the
/// four bin indices with the first dimension most significant.
pub fn cluster_state(config: &ClusterConfig, state: &State) -> ProxyState {
    let mut id = 0u64;
    let mut representative = [0.0; 4];
    for d in 0..4 {
        let b = config.bin(d, state[d]);
        id = id * config.subspaces as u64 + b as u64;
        representative[d] = config.midpoint(d, b);
    }
    ProxyState { id, representative }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub state: State,
    pub policy: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawExperienceMemory {
    pub records: Vec<ExperienceRecord>,
}

impl RawExperienceMemory {
    pub fn push(&mut self, state: State, policy: Vec<f64>) {
        self.records.push(ExperienceRecord { state, policy });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Concatenation without deduplication.
    pub fn concat(memories: &[RawExperienceMemory]) -> RawExperienceMemory {
        RawExperienceMemory {
            records: memories.iter().flat_map(|m| m.records.iter().cloned()).collect(),
        }
    }

    /// Each record carries the state and the policy.
    pub fn payload_bytes(&self, float_width: u64) -> u64 {
        self.records.len() as u64 * (4 + ACTIONS as u64) * float_width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyEntry {
    pub representative: State,
    pub policy: Vec<f64>,
    pub visits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyExperienceMemory {
    pub config: ClusterConfig,
    pub entries: BTreeMap<u64, ProxyEntry>,
}

impl ProxyExperienceMemory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Each entry carries the cluster id and the average policy.
    pub fn payload_bytes(&self, float_width: u64) -> u64 {
        self.entries.len() as u64 * (ACTIONS as u64 + 1) * float_width
    }
}

pub fn build_proxy_memory(raw: &RawExperienceMemory, config: &ClusterConfig) -> ProxyExperienceMemory {
    let mut sums: BTreeMap<u64, (State, Vec<f64>, u64)> = BTreeMap::new();
    for r in &raw.records {
        let p = cluster_state(config, &r.state);
        let e = sums
            .entry(p.id)
            .or_insert_with(|| (p.representative, vec![0.0; r.policy.len()], 0));
        e.1.iter_mut().zip(&r.policy).for_each(|(a, b)| *a += b);
        e.2 += 1;
    }
    let entries = sums
        .into_iter()
        .map(|(id, (representative, sum, visits))| {
            let policy = sum.iter().map(|v| v / visits as f64).collect();
            (id, ProxyEntry { representative, policy, visits })
        })
        .collect();
    ProxyExperienceMemory { config: *config, entries }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeWeighting {
    /// Plain mean of the contributing agents' local averages.
    #[default]
    Unweighted,
    /// Mean weighted by each agent's visit count.
    Visits,
}

pub fn merge_global(
    memories: &[ProxyExperienceMemory],
    weighting: MergeWeighting,
) -> Result<ProxyExperienceMemory> {
    let first = memories
        .first()
        .ok_or_else(|| Error::Aggregation("no proxy memories to merge".into()))?;
    if memories.iter().any(|m| m.config != first.config) {
        return Err(Error::Aggregation("proxy memories use different cluster configs".into()));
    }
    let mut acc: BTreeMap<u64, (State, Vec<f64>, f64, u64)> = BTreeMap::new();
    for m in memories {
        for (&id, e) in &m.entries {
            let w = match weighting {
                MergeWeighting::Unweighted => 1.0,
                MergeWeighting::Visits => e.visits as f64,
            };
            let slot = acc
                .entry(id)
                .or_insert_with(|| (e.representative, vec![0.0; e.policy.len()], 0.0, 0));
            slot.1.iter_mut().zip(&e.policy).for_each(|(a, b)| *a += w * b);
            slot.2 += w;
            slot.3 += e.visits;
        }
    }
    let entries = acc
        .into_iter()
        .map(|(id, (representative, sum, weight, visits))| {
            let policy = sum.iter().map(|v| v / weight).collect();
            (id, ProxyEntry { representative, policy, visits })
        })
        .collect();
    Ok(ProxyExperienceMemory { config: first.config, entries })
}

/// States paired with target policies, the common input of distillation.
pub trait DistillSource {
    fn targets(&self) -> Vec<(State, &[f64])>;
}

impl DistillSource for RawExperienceMemory {
    fn targets(&self) -> Vec<(State, &[f64])> {
        self.records.iter().map(|r| (r.state, &r.policy[..])).collect()
    }
}

impl DistillSource for ProxyExperienceMemory {
    fn targets(&self) -> Vec<(State, &[f64])> {
        self.entries.values().map(|e| (e.representative, &e.policy[..])).collect()
    }
}

/// `−Σ_k Σ_a π_target(a|s_k) log π_θ(a|s_k)` and its gradient.
pub fn distill_loss(actor: &Mlp, memory: &impl DistillSource) -> Result<(f64, Vec<f64>)> {
    let targets = memory.targets();
    if targets.is_empty() {
        return Err(Error::invalid("distillation memory is empty"));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; actor.param_count()];
    for (s, policy) in targets {
        let (l, d) = loss_and_grad(LossKind::cross_entropy(), &actor.predict(&s)?, policy)?;
        total += l;
        let g = actor.gradient_from_output(&s, &d, None)?;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}
