//! Admission control at the lead truck. One join transaction at a time; leaves
//! are applied immediately.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Action, DESIRED_GAP_M};
use crate::net::NodeId;
use crate::packets::{NotifyPayload, NotifyPurpose, Payload, VehicleInfo, WireMode};

pub const TRANSACTION_TIMEOUT_MS: u64 = 10_000;
/// Minimum spacing between repair NOTIFYs to the same member.
pub const REPAIR_QUIET_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Awaiting {
    SpaceOk,
    RequesterAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PendingJoin {
    pub requester: NodeId,
    pub insert_after: NodeId,
    /// Member asked to open the gap, for a middle join.
    pub successor: Option<NodeId>,
    pub awaiting: Awaiting,
    pub deadline: u64,
}

#[derive(Debug, Clone)]
pub struct LeadController {
    train: Vec<NodeId>,
    pending: Option<PendingJoin>,
    timeout_ms: u64,
    quiet_until: BTreeMap<NodeId, u64>,
    departed: BTreeSet<NodeId>,
}

impl Default for LeadController {
    fn default() -> Self {
        LeadController::new(TRANSACTION_TIMEOUT_MS)
    }
}

/// Whether the requester travels the train's way. Everything here drives east.
fn same_direction(_info: &VehicleInfo) -> bool {
    true
}

impl LeadController {
    pub fn new(timeout_ms: u64) -> LeadController {
        LeadController {
            train: vec![NodeId::LEAD],
            pending: None,
            timeout_ms,
            quiet_until: BTreeMap::new(),
            departed: BTreeSet::new(),
        }
    }

    pub fn train(&self) -> &[NodeId] {
        &self.train
    }

    pub fn pending(&self) -> Option<&PendingJoin> {
        self.pending.as_ref()
    }

    fn successor_of(&self, n: NodeId) -> Option<NodeId> {
        let i = self.train.iter().position(|&m| m == n)?;
        self.train.get(i + 1).copied()
    }

    fn notify(dest: NodeId, purpose: NotifyPurpose, target: NodeId, gap_m: f64, awaiting: Option<NodeId>) -> Action {
        Action::Send {
            dest,
            payload: Payload::Notify(NotifyPayload {
                purpose,
                target,
                gap_m,
                awaiting,
            }),
        }
    }

    /// `member_x` gives the current front position of a train member.
    pub fn on_join(
        &mut self,
        now_ms: u64,
        requester: NodeId,
        info: &VehicleInfo,
        member_x: impl Fn(NodeId) -> Option<f64>,
    ) -> Vec<Action> {
        if self.pending.is_some() || !same_direction(info) || self.train.contains(&requester) {
            return vec![Action::JoinDeclined { requester }];
        }
        let insert_after = self
            .train
            .iter()
            .filter_map(|&m| member_x(m).map(|x| (m, x)))
            .filter(|&(_, x)| x > info.x)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(NodeId::LEAD, |(m, _)| m);
        let successor = self.successor_of(insert_after);
        let (awaiting, first) = match successor {
            None => (
                Awaiting::RequesterAck,
                Action::Send {
                    dest: requester,
                    payload: Payload::AckJoin { target: insert_after },
                },
            ),
            Some(s) => (
                Awaiting::SpaceOk,
                Self::notify(
                    s,
                    NotifyPurpose::MakeSpace,
                    insert_after,
                    DESIRED_GAP_M + info.length + DESIRED_GAP_M,
                    Some(requester),
                ),
            ),
        };
        self.pending = Some(PendingJoin {
            requester,
            insert_after,
            successor,
            awaiting,
            deadline: now_ms + self.timeout_ms,
        });
        vec![first]
    }

    pub fn on_ok(&mut self, from: NodeId, requester: NodeId) -> Vec<Action> {
        match self.pending.as_mut() {
            Some(p)
                if p.awaiting == Awaiting::SpaceOk
                    && p.successor == Some(from)
                    && p.requester == requester =>
            {
                p.awaiting = Awaiting::RequesterAck;
                vec![Action::Send {
                    dest: requester,
                    payload: Payload::AckJoin {
                        target: p.insert_after,
                    },
                }]
            }
            _ => Vec::new(),
        }
    }

    /// The requester's confirmation that it now follows `target`.
    pub fn on_ack_join(&mut self, from: NodeId, target: NodeId) -> Vec<Action> {
        match self.pending {
            Some(p) if p.requester == from && p.awaiting == Awaiting::RequesterAck => {
                let at = self
                    .train
                    .iter()
                    .position(|&m| m == target)
                    .or_else(|| self.train.iter().position(|&m| m == p.insert_after))
                    .unwrap_or(self.train.len() - 1);
                self.train.insert(at + 1, from);
                self.departed.remove(&from);
                self.pending = None;
                vec![Action::TrainChanged(self.train.clone())]
            }
            _ => Vec::new(),
        }
    }

    pub fn on_leave(&mut self, now_ms: u64, from: NodeId) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(i) = self.train.iter().position(|&m| m == from) else {
            if self.pending.is_some_and(|p| p.requester == from) {
                self.pending = None;
                out.push(Action::JoinAborted {
                    requester: from,
                    reason: "requester left",
                });
            }
            return out;
        };
        if i == 0 {
            return out;
        }
        let pred = self.train[i - 1];
        let succ = self.train.get(i + 1).copied();
        self.train.remove(i);
        self.departed.insert(from);
        if let Some(s) = succ {
            self.quiet_until.insert(s, now_ms + REPAIR_QUIET_MS);
            out.push(Self::notify(s, NotifyPurpose::Retarget, pred, DESIRED_GAP_M, None));
        }
        out.push(Action::TrainChanged(self.train.clone()));
        if let Some(p) = self.pending {
            if p.insert_after == from || p.successor == Some(from) {
                self.pending = None;
                out.push(Action::JoinAborted {
                    requester: p.requester,
                    reason: "placement changed",
                });
                if let Some(s) = p.successor.filter(|&s| s != from && Some(s) != succ) {
                    out.push(Self::notify(s, NotifyPurpose::Retarget, p.insert_after, DESIRED_GAP_M, None));
                }
            }
        }
        out
    }

    /// Mode a member or requester reports in its periodic vehicle information.
    /// A requester seen following counts as its confirmation, and a member seen
    /// following a vehicle that left the train is pointed at its predecessor.
    /// Both cover a lost special packet.
    pub fn on_member_info(&mut self, now_ms: u64, member: NodeId, mode: WireMode) -> Vec<Action> {
        let WireMode::Follow(target) = mode else {
            return Vec::new();
        };
        if self
            .pending
            .is_some_and(|p| p.requester == member && p.awaiting == Awaiting::RequesterAck)
        {
            return self.on_ack_join(member, target);
        }
        let Some(i) = self.train.iter().position(|&m| m == member) else {
            return Vec::new();
        };
        if i == 0 || !self.departed.contains(&target) {
            return Vec::new();
        }
        if self.quiet_until.get(&member).is_some_and(|&q| now_ms < q) {
            return Vec::new();
        }
        self.quiet_until.insert(member, now_ms + REPAIR_QUIET_MS);
        vec![Self::notify(
            member,
            NotifyPurpose::Retarget,
            self.train[i - 1],
            DESIRED_GAP_M,
            None,
        )]
    }

    /// Expires a stalled transaction, releasing a member held in make-space.
    pub fn poll(&mut self, now_ms: u64) -> Vec<Action> {
        let Some(p) = self.pending else {
            return Vec::new();
        };
        if now_ms < p.deadline {
            return Vec::new();
        }
        self.pending = None;
        let mut out = vec![Action::JoinAborted {
            requester: p.requester,
            reason: "timeout",
        }];
        if let Some(s) = p.successor {
            out.push(Self::notify(s, NotifyPurpose::Retarget, p.insert_after, DESIRED_GAP_M, None));
        }
        out
    }
}
