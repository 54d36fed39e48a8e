//! Deterministic threshold model of per-round uplink/downlink budgets.
//!
//! A payload is delivered iff it fits in the direction's per-round byte
//! budget. Delivered payloads take `bytes / rate` seconds; dropped ones burn
//! the whole round (`budget / rate`) and deliver nothing.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const KIB: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub uplink_bytes_per_round: u64,
    pub downlink_bytes_per_round: u64,
    /// Bytes per second.
    pub uplink_rate: f64,
    /// Bytes per second.
    pub downlink_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPreset {
    /// 64 KiB per round each way.
    Symmetric,
    /// 1 KiB up, 64 KiB down per round.
    Asymmetric,
}

impl ChannelPreset {
    pub fn budget(self) -> LinkBudget {
        match self {
            ChannelPreset::Symmetric => LinkBudget::symmetric(),
            ChannelPreset::Asymmetric => LinkBudget::asymmetric(),
        }
    }
}

/// Preset plus optional field overrides, as written in run configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub preset: ChannelPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink_bytes_per_round: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink_bytes_per_round: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink_rate: Option<f64>,
}

impl ChannelConfig {
    pub fn preset(preset: ChannelPreset) -> Self {
        ChannelConfig {
            preset,
            uplink_bytes_per_round: None,
            downlink_bytes_per_round: None,
            uplink_rate: None,
            downlink_rate: None,
        }
    }

    pub fn resolve(&self) -> Result<LinkBudget> {
        let base = self.preset.budget();
        LinkBudget {
            uplink_bytes_per_round: self.uplink_bytes_per_round.unwrap_or(base.uplink_bytes_per_round),
            downlink_bytes_per_round: self
                .downlink_bytes_per_round
                .unwrap_or(base.downlink_bytes_per_round),
            uplink_rate: self.uplink_rate.unwrap_or(base.uplink_rate),
            downlink_rate: self.downlink_rate.unwrap_or(base.downlink_rate),
        }
        .validated()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub delivered: bool,
    pub latency_seconds: f64,
}

/// A transfer too large for one round, split across consecutive rounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BulkOutcome {
    pub rounds_used: u64,
    pub latency_seconds: f64,
}

impl LinkBudget {
    pub fn symmetric() -> Self {
        LinkBudget {
            uplink_bytes_per_round: 64 * KIB,
            downlink_bytes_per_round: 64 * KIB,
            uplink_rate: (64 * KIB) as f64,
            downlink_rate: (64 * KIB) as f64,
        }
    }

    pub fn asymmetric() -> Self {
        LinkBudget {
            uplink_bytes_per_round: KIB,
            downlink_bytes_per_round: 64 * KIB,
            uplink_rate: KIB as f64,
            downlink_rate: (64 * KIB) as f64,
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.uplink_bytes_per_round == 0 || self.downlink_bytes_per_round == 0 {
            return Err(Error::invalid("per-round byte budgets must be positive"));
        }
        if !(self.uplink_rate > 0.0 && self.downlink_rate > 0.0) {
            return Err(Error::invalid("link rates must be positive"));
        }
        Ok(self)
    }

    fn direction(&self, direction: Direction) -> (u64, f64) {
        match direction {
            Direction::Up => (self.uplink_bytes_per_round, self.uplink_rate),
            Direction::Down => (self.downlink_bytes_per_round, self.downlink_rate),
        }
    }

    pub fn round_duration(&self, direction: Direction) -> f64 {
        let (budget, rate) = self.direction(direction);
        budget as f64 / rate
    }
}

pub fn transmit(budget: &LinkBudget, direction: Direction, payload_bytes: u64) -> Outcome {
    let (limit, rate) = budget.direction(direction);
    if payload_bytes <= limit {
        Outcome {
            delivered: true,
            latency_seconds: payload_bytes as f64 / rate,
        }
    } else {
        Outcome {
            delivered: false,
            latency_seconds: limit as f64 / rate,
        }
    }
}

/// One-off transfer (e.g. seed collection) spread over as many rounds as the
/// budget requires. Always delivered.
pub fn transmit_bulk(budget: &LinkBudget, direction: Direction, payload_bytes: u64) -> BulkOutcome {
    let (limit, rate) = budget.direction(direction);
    BulkOutcome {
        rounds_used: payload_bytes.div_ceil(limit),
        latency_seconds: payload_bytes as f64 / rate,
    }
}
