//! Reliable broadcast: duplicate-suppressing flooding where each duplicate is
//! re-sent with a probability that halves every time the packet has been sent.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::net::NodeId;
use crate::packets::Packet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheEntry {
    pub max_seq: u32,
    /// How many times this node has broadcast the newest packet from the source.
    pub bn: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheTable {
    entries: BTreeMap<NodeId, CacheEntry>,
}

impl CacheTable {
    pub fn new() -> CacheTable {
        CacheTable::default()
    }

    pub fn get(&self, source: NodeId) -> Option<CacheEntry> {
        self.entries.get(&source).copied()
    }

    pub fn insert(&mut self, source: NodeId, entry: CacheEntry) {
        self.entries.insert(source, entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RbaDecision {
    /// Our own packet came back.
    Discard,
    ForwardNew,
    ForwardDuplicate,
    DropDuplicate,
}

impl RbaDecision {
    pub fn forwards(self) -> bool {
        matches!(self, RbaDecision::ForwardNew | RbaDecision::ForwardDuplicate)
    }
}

/// Probability of re-sending a packet already broadcast `bn` times.
pub fn rebroadcast_probability(bn: u32) -> f64 {
    0.5f64.powi(bn.min(1074) as i32)
}

/// Cache update and forwarding decision for one received broadcast. The caller
/// forwards a copy with `prev_hop` rewritten to `me` to every neighbor except the
/// packet's original `prev_hop`.
pub fn rba_on_receive<R: Rng + ?Sized>(
    me: NodeId,
    table: &mut CacheTable,
    pkt: &Packet,
    rng: &mut R,
) -> RbaDecision {
    let source = pkt.source();
    if source == me {
        return RbaDecision::Discard;
    }
    match table.entries.get_mut(&source) {
        Some(e) if e.max_seq >= pkt.seq() => {
            let p = rebroadcast_probability(e.bn);
            e.bn = e.bn.saturating_add(1);
            if rng.gen::<f64>() < p {
                RbaDecision::ForwardDuplicate
            } else {
                RbaDecision::DropDuplicate
            }
        }
        _ => {
            table.entries.insert(
                source,
                CacheEntry {
                    max_seq: pkt.seq(),
                    bn: 1,
                },
            );
            RbaDecision::ForwardNew
        }
    }
}

/// Copy of `pkt` as relayed by `me`.
pub fn relay_copy(pkt: &Packet, me: NodeId) -> Packet {
    let mut out = pkt.clone();
    out.header.prev_hop = me;
    out
}
