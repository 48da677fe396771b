use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::neighbor::NeighborTable;
use crate::net::NodeId;
use crate::packets::TcPayload;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyEntry {
    pub selectors: BTreeSet<NodeId>,
    pub last_seq: u32,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TcUpdate {
    Inserted,
    Replaced,
    Refreshed,
    Ignored,
}

/// Per-originator MPR selector sets learned from TC messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyTable {
    hold_ms: u64,
    entries: BTreeMap<NodeId, TopologyEntry>,
}

impl TopologyTable {
    pub fn new(hold_ms: u64) -> TopologyTable {
        TopologyTable {
            hold_ms,
            entries: BTreeMap::new(),
        }
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, TopologyEntry> {
        &self.entries
    }

    /// Entries still within their holding time.
    pub fn live(&self, now_ms: u64) -> impl Iterator<Item = (NodeId, &TopologyEntry)> {
        self.entries
            .iter()
            .filter(move |(_, e)| e.expires_at > now_ms)
            .map(|(&o, e)| (o, e))
    }

    pub fn process_tc(&mut self, originator: NodeId, tc: &TcPayload, now_ms: u64) -> TcUpdate {
        let expires_at = now_ms + self.hold_ms;
        let fresh = TopologyEntry {
            selectors: tc.selectors.iter().copied().collect(),
            last_seq: tc.tc_seq,
            expires_at,
        };
        match self.entries.get_mut(&originator) {
            Some(e) if e.expires_at > now_ms => {
                if tc.tc_seq > e.last_seq {
                    *e = fresh;
                    TcUpdate::Replaced
                } else if tc.tc_seq == e.last_seq {
                    e.expires_at = expires_at;
                    TcUpdate::Refreshed
                } else {
                    TcUpdate::Ignored
                }
            }
            _ => {
                self.entries.insert(originator, fresh);
                TcUpdate::Inserted
            }
        }
    }

    pub fn expire(&mut self, now_ms: u64) -> bool {
        let n = self.entries.len();
        self.entries.retain(|_, e| e.expires_at > now_ms);
        self.entries.len() != n
    }
}

/// TC content for this node, or `None` when nobody selected it as MPR.
pub fn generate_tc(nb: &NeighborTable) -> Option<TcPayload> {
    if nb.selectors().is_empty() {
        return None;
    }
    Some(TcPayload {
        tc_seq: nb.table_seq(),
        selectors: nb.selectors().iter().collect(),
    })
}
