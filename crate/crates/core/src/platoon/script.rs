//! Scripted scenario: staggered joins from the start, retried while free, and a
//! collective leave shortly before the end of the run.

use std::collections::{BTreeMap, BTreeSet};

use super::PlatoonMode;
use crate::net::NodeId;

pub const JOIN_STAGGER_MS: u64 = 1000;
pub const JOIN_RETRY_MS: u64 = 1000;
/// Leave this long before the end, or a tenth of the run if that is shorter.
pub const LEAVE_LEAD_TIME_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedVerb {
    Join,
    Leave,
}

#[derive(Debug, Clone)]
pub struct Script {
    join_at: BTreeMap<NodeId, u64>,
    leave_at: u64,
    released: BTreeSet<NodeId>,
    left: BTreeSet<NodeId>,
    last_join: BTreeMap<NodeId, u64>,
}

impl Script {
    /// Followers are nodes `2..=n_followers + 1`.
    pub fn new(n_followers: usize, duration_ms: u64) -> Script {
        let join_at = (0..n_followers)
            .map(|i| (NodeId::new(i as u16 + 2).unwrap(), i as u64 * JOIN_STAGGER_MS))
            .collect();
        Script {
            join_at,
            leave_at: duration_ms - LEAVE_LEAD_TIME_MS.min(duration_ms / 10),
            released: BTreeSet::new(),
            left: BTreeSet::new(),
            last_join: BTreeMap::new(),
        }
    }

    pub fn leave_at(&self) -> u64 {
        self.leave_at
    }

    /// Hands `node` over to the operator for the rest of the run.
    pub fn release(&mut self, node: NodeId) {
        self.released.insert(node);
    }

    pub fn due(&mut self, now_ms: u64, node: NodeId, mode: PlatoonMode) -> Option<ScriptedVerb> {
        if self.released.contains(&node) || self.left.contains(&node) {
            return None;
        }
        let &join_at = self.join_at.get(&node)?;
        if now_ms >= self.leave_at {
            if matches!(mode, PlatoonMode::Follow(_)) {
                self.left.insert(node);
                return Some(ScriptedVerb::Leave);
            }
            return None;
        }
        if mode != PlatoonMode::Free || now_ms < join_at {
            return None;
        }
        if self
            .last_join
            .get(&node)
            .is_some_and(|&t| now_ms < t + JOIN_RETRY_MS)
        {
            return None;
        }
        self.last_join.insert(node, now_ms);
        Some(ScriptedVerb::Join)
    }
}
