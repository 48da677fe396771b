use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{distance, NodeId, Position};
use crate::packets::Dest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumConfig {
    pub range_m: f64,
    pub loss_max: f64,
    pub per_hop_delay_ms: u64,
    pub rng_seed: u64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            range_m: 100.0,
            loss_max: 0.2,
            per_hop_delay_ms: 1,
            rng_seed: 0,
        }
    }
}

impl MediumConfig {
    pub fn validate(&self) -> Result<(), MediumError> {
        if !(self.range_m > 0.0 && self.range_m.is_finite()) {
            return Err(MediumError::InvalidConfig(format!(
                "range_m must be positive, got {}",
                self.range_m
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_max) {
            return Err(MediumError::InvalidConfig(format!(
                "loss_max must lie in [0, 1], got {}",
                self.loss_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid medium configuration: {0}")]
    InvalidConfig(String),
}

/// Linear distance loss: `loss_max * d / range` inside the range, certain loss beyond it.
pub fn loss_probability(d: f64, cfg: &MediumConfig) -> f64 {
    if d > cfg.range_m {
        1.0
    } else {
        (cfg.loss_max * d / cfg.range_m).clamp(0.0, 1.0)
    }
}

/// One Bernoulli trial of the loss law. Out-of-range pairs consume no randomness.
pub fn survives<R: Rng + ?Sized>(d: f64, cfg: &MediumConfig, rng: &mut R) -> bool {
    if d > cfg.range_m {
        return false;
    }
    rng.gen::<f64>() >= loss_probability(d, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered { to: NodeId, distance: f64, at_ms: u64 },
    Lost { to: NodeId, distance: f64 },
    OutOfRange { to: NodeId, distance: f64 },
}

impl DeliveryOutcome {
    pub fn receiver(&self) -> NodeId {
        match *self {
            DeliveryOutcome::Delivered { to, .. }
            | DeliveryOutcome::Lost { to, .. }
            | DeliveryOutcome::OutOfRange { to, .. } => to,
        }
    }
}

/// Link-level counters over in-range delivery attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LinkStats {
    pub attempts: u64,
    pub lost: u64,
    /// Sum of the loss law over every attempt, i.e. the expected number of losses.
    pub expected_losses: f64,
}

impl LinkStats {
    pub fn loss_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.lost as f64 / self.attempts as f64
        }
    }

    pub fn expected_loss_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.expected_losses / self.attempts as f64
        }
    }

    pub fn merge(&mut self, other: &LinkStats) {
        self.attempts += other.attempts;
        self.lost += other.lost;
        self.expected_losses += other.expected_losses;
    }
}

/// In-process wireless medium. Filtering happens here, at transmit time, from a
/// single seeded stream so that a run is replayable.
#[derive(Debug, Clone)]
pub struct Medium {
    cfg: MediumConfig,
    rng: ChaCha8Rng,
    positions: BTreeMap<NodeId, Position>,
    stats: LinkStats,
}

impl Medium {
    pub fn new(cfg: MediumConfig) -> Result<Medium, MediumError> {
        cfg.validate()?;
        Ok(Medium {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            positions: BTreeMap::new(),
            stats: LinkStats::default(),
        })
    }

    pub fn config(&self) -> &MediumConfig {
        &self.cfg
    }

    pub fn set_position(&mut self, node: NodeId, pos: Position) {
        self.positions.insert(node, pos);
    }

    pub fn position(&self, node: NodeId) -> Option<Position> {
        self.positions.get(&node).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.positions.keys().copied()
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Nodes currently within range of `node`, in id order.
    pub fn neighbors_in_range(&self, node: NodeId) -> Vec<NodeId> {
        let Some(&me) = self.positions.get(&node) else {
            return Vec::new();
        };
        self.positions
            .iter()
            .filter(|(&id, &p)| id != node && distance(me, p) <= self.cfg.range_m)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Size of the connected component of `node` in the range graph, minus the node itself.
    pub fn reachable_count(&self, node: NodeId) -> usize {
        if !self.positions.contains_key(&node) {
            return 0;
        }
        let mut seen = vec![node];
        let mut frontier = vec![node];
        while let Some(u) = frontier.pop() {
            for v in self.neighbors_in_range(u) {
                if !seen.contains(&v) {
                    seen.push(v);
                    frontier.push(v);
                }
            }
        }
        seen.len() - 1
    }

    pub fn transmit(
        &mut self,
        now_ms: u64,
        from: NodeId,
        to: Dest,
    ) -> Result<Vec<DeliveryOutcome>, MediumError> {
        let origin = *self
            .positions
            .get(&from)
            .ok_or(MediumError::UnknownNode(from))?;
        let receivers: Vec<(NodeId, Position)> = match to {
            Dest::Broadcast => self
                .positions
                .iter()
                .filter(|(&id, _)| id != from)
                .map(|(&id, &p)| (id, p))
                .collect(),
            Dest::Node(id) if id == from => Vec::new(),
            Dest::Node(id) => {
                let p = *self.positions.get(&id).ok_or(MediumError::UnknownNode(id))?;
                vec![(id, p)]
            }
        };
        let mut out = Vec::with_capacity(receivers.len());
        for (id, p) in receivers {
            let d = distance(origin, p);
            if d > self.cfg.range_m {
                out.push(DeliveryOutcome::OutOfRange { to: id, distance: d });
                continue;
            }
            self.stats.attempts += 1;
            self.stats.expected_losses += loss_probability(d, &self.cfg);
            if survives(d, &self.cfg, &mut self.rng) {
                out.push(DeliveryOutcome::Delivered {
                    to: id,
                    distance: d,
                    at_ms: now_ms + self.cfg.per_hop_delay_ms,
                });
            } else {
                self.stats.lost += 1;
                out.push(DeliveryOutcome::Lost { to: id, distance: d });
            }
        }
        Ok(out)
    }
}
