//! Relay decision for broadcast kinds in MPR mode.

use std::collections::BTreeMap;

use serde::Serialize;

use super::neighbor::MprSelectorTable;
use crate::net::NodeId;
use crate::packets::{Packet, PacketKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardDecision {
    /// Relay to every symmetric neighbor except the previous hop and the source.
    /// `fresh` is false when the copy was already consumed from a non-selector.
    Retransmit { fresh: bool },
    Consume,
    Drop,
}

impl ForwardDecision {
    pub fn is_fresh(self) -> bool {
        matches!(
            self,
            ForwardDecision::Consume | ForwardDecision::Retransmit { fresh: true }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Seen {
    max_seq: u32,
    retransmitted: bool,
}

/// Duplicate set keyed by (source, kind).
#[derive(Debug, Clone, Default)]
pub struct DupCache {
    seen: BTreeMap<(NodeId, PacketKind), Seen>,
}

impl DupCache {
    pub fn new() -> DupCache {
        DupCache::default()
    }

    pub fn max_seq(&self, source: NodeId, kind: PacketKind) -> Option<u32> {
        self.seen.get(&(source, kind)).map(|s| s.max_seq)
    }
}

/// A packet newer than anything seen from its source is consumed, and relayed when
/// its previous hop selected us. A copy of the newest packet that arrives later from
/// a selector is still relayed once, since the first copy may have come from a
/// neighbor that did not select us. Anything else is dropped.
pub fn forward_decision(
    me: NodeId,
    selectors: &MprSelectorTable,
    cache: &mut DupCache,
    pkt: &Packet,
) -> ForwardDecision {
    if pkt.source() == me {
        return ForwardDecision::Drop;
    }
    let relay = selectors.contains(pkt.header.prev_hop);
    let key = (pkt.source(), pkt.kind());
    match cache.seen.get_mut(&key) {
        Some(s) if pkt.seq() < s.max_seq => ForwardDecision::Drop,
        Some(s) if pkt.seq() == s.max_seq => {
            if relay && !s.retransmitted {
                s.retransmitted = true;
                ForwardDecision::Retransmit { fresh: false }
            } else {
                ForwardDecision::Drop
            }
        }
        _ => {
            cache.seen.insert(
                key,
                Seen {
                    max_seq: pkt.seq(),
                    retransmitted: relay,
                },
            );
            if relay {
                ForwardDecision::Retransmit { fresh: true }
            } else {
                ForwardDecision::Consume
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::olsr::neighbor::{NeighborTable, TieBreak};
    use crate::packets::{Dest, HelloPayload, LinkStatus, Payload, TcPayload};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    fn selected_by(me: u16, sel: &[u16]) -> NeighborTable {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut nb = NeighborTable::new(id(me), 100, TieBreak::LowestId);
        for &s in sel {
            nb.process_hello(
                id(s),
                &HelloPayload {
                    neighbors: vec![(id(me), LinkStatus::Mpr)],
                },
                0,
                &mut r,
            )
            .unwrap();
        }
        nb
    }

    fn tc_from(src: u16, seq: u32, prev: u16) -> Packet {
        let mut p = Packet::new(id(src), seq, Dest::Broadcast, Payload::Tc(TcPayload::default()));
        p.header.prev_hop = id(prev);
        p
    }

    #[test]
    fn relays_only_for_selectors() {
        let nb = selected_by(5, &[2]);
        let mut c = DupCache::new();
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 1, 2)),
            ForwardDecision::Retransmit { fresh: true }
        );
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 2, 3)),
            ForwardDecision::Consume
        );
    }

    #[test]
    fn duplicates_and_stale_drop() {
        let nb = selected_by(5, &[2]);
        let mut c = DupCache::new();
        forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 4, 2));
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 4, 2)),
            ForwardDecision::Drop
        );
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 3, 2)),
            ForwardDecision::Drop
        );
        assert_eq!(c.max_seq(id(1), PacketKind::Tc), Some(4));
    }

    #[test]
    fn late_selector_copy_is_relayed_once() {
        let nb = selected_by(5, &[2]);
        let mut c = DupCache::new();
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 1, 3)),
            ForwardDecision::Consume
        );
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 1, 2)),
            ForwardDecision::Retransmit { fresh: false }
        );
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(1, 1, 2)),
            ForwardDecision::Drop
        );
    }

    #[test]
    fn own_packets_dropped() {
        let nb = selected_by(5, &[2]);
        let mut c = DupCache::new();
        assert_eq!(
            forward_decision(id(5), nb.selectors(), &mut c, &tc_from(5, 1, 2)),
            ForwardDecision::Drop
        );
    }
}
