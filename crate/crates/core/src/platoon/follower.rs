use serde::Serialize;

use super::dynamics::{speed_zone, VehicleDynamics};
use super::{
    Action, CommandError, Knowledge, PlatoonMode, Projected, CORRECTION_MPS, DESIRED_GAP_M,
    GAP_BAND_M, MERGE_CLEARANCE_M, SAFETY_GAP_M, SLOT_TOLERANCE_M,
};
use crate::net::{Lane, NodeId};
use crate::packets::{NotifyPayload, NotifyPurpose, Payload, VehicleInfo, WireMode};

pub const LEAVE_COPIES: usize = 3;
/// Give up holding space for a joiner not heard from, or not joining, for this long.
pub const MAKE_SPACE_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Moving to the slot behind the target, merging onto the right lane when there.
    Approach,
    /// Holding the gap band behind the target.
    Settled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MakeSpace {
    awaiting: NodeId,
    reserve: f64,
    ok_sent: bool,
    deadline: u64,
}

#[derive(Debug, Clone)]
pub struct FollowerController {
    me: NodeId,
    mode: PlatoonMode,
    phase: Phase,
    desired_gap: f64,
    make_space: Option<MakeSpace>,
    form_deadline: u64,
    form_timeout_ms: u64,
}

impl FollowerController {
    pub fn new(me: NodeId, form_timeout_ms: u64) -> FollowerController {
        FollowerController {
            me,
            mode: PlatoonMode::Free,
            phase: Phase::Approach,
            desired_gap: DESIRED_GAP_M,
            make_space: None,
            form_deadline: 0,
            form_timeout_ms,
        }
    }

    pub fn mode(&self) -> PlatoonMode {
        self.mode
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn desired_gap(&self) -> f64 {
        self.desired_gap
    }

    /// Following at the normal gap with no maneuver in progress.
    pub fn is_settled(&self) -> bool {
        matches!(self.mode, PlatoonMode::Follow(_))
            && self.phase == Phase::Settled
            && self.make_space.is_none()
            && self.desired_gap == DESIRED_GAP_M
    }

    fn change_mode(&mut self, to: PlatoonMode, reason: &'static str, out: &mut Vec<Action>) {
        let from = self.mode;
        self.mode = to;
        out.push(Action::ModeChanged { from, to, reason });
    }

    fn restart_approach(&mut self, gap: f64) {
        self.desired_gap = gap;
        self.phase = Phase::Approach;
    }

    pub fn request_join(&mut self, now_ms: u64, info: VehicleInfo) -> Result<Vec<Action>, CommandError> {
        if self.mode != PlatoonMode::Free {
            return Err(CommandError::IllegalState);
        }
        let mut out = vec![Action::Send {
            dest: NodeId::LEAD,
            payload: Payload::Join(info),
        }];
        self.change_mode(PlatoonMode::Form, "join requested", &mut out);
        self.form_deadline = now_ms + self.form_timeout_ms;
        Ok(out)
    }

    pub fn leave(&mut self, dynamics: &mut VehicleDynamics) -> Result<Vec<Action>, CommandError> {
        if !matches!(self.mode, PlatoonMode::Follow(_)) {
            return Err(CommandError::IllegalState);
        }
        let mut out: Vec<Action> = (0..LEAVE_COPIES)
            .map(|_| Action::Send {
                dest: NodeId::LEAD,
                payload: Payload::Leave,
            })
            .collect();
        self.change_mode(PlatoonMode::Free, "left", &mut out);
        self.make_space = None;
        self.restart_approach(DESIRED_GAP_M);
        dynamics.pos.lane = Lane::Left;
        Ok(out)
    }

    pub fn on_ack_join(&mut self, target: NodeId) -> Vec<Action> {
        if self.mode != PlatoonMode::Form {
            return Vec::new();
        }
        let mut out = Vec::new();
        self.change_mode(PlatoonMode::Follow(target), "accepted", &mut out);
        self.make_space = None;
        self.restart_approach(DESIRED_GAP_M);
        out.push(Action::Send {
            dest: NodeId::LEAD,
            payload: Payload::AckJoin { target },
        });
        out
    }

    pub fn on_notify(&mut self, now_ms: u64, n: &NotifyPayload) -> Vec<Action> {
        let PlatoonMode::Follow(current) = self.mode else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if n.target != current {
            self.change_mode(PlatoonMode::Follow(n.target), "notified", &mut out);
        }
        match (n.purpose, n.awaiting) {
            (NotifyPurpose::MakeSpace, Some(awaiting)) => {
                self.make_space = Some(MakeSpace {
                    awaiting,
                    reserve: n.gap_m,
                    ok_sent: false,
                    deadline: now_ms + MAKE_SPACE_TIMEOUT_MS,
                });
                self.restart_approach(n.gap_m);
            }
            _ => {
                self.make_space = None;
                self.restart_approach(n.gap_m);
            }
        }
        out
    }

    /// One control step: timeouts, make-space progress, speed choice, motion.
    pub fn tick(
        &mut self,
        now_ms: u64,
        dynamics: &mut VehicleDynamics,
        world: &Knowledge,
        dt: f64,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        if self.mode == PlatoonMode::Form && now_ms >= self.form_deadline {
            self.change_mode(PlatoonMode::Free, "timeout", &mut out);
        }
        let mut v = match self.mode {
            PlatoonMode::Follow(t) => match world.project(t, now_ms) {
                Some(tgt) => self.follow(now_ms, tgt, dynamics, world, &mut out),
                None => dynamics.velocity,
            },
            _ => {
                dynamics.pos.lane = Lane::Left;
                speed_zone(dynamics.pos.x)
            }
        };
        for o in world.projected(now_ms) {
            if o.id == self.me || o.lane != dynamics.pos.lane || o.x <= dynamics.pos.x {
                continue;
            }
            if o.rear() - dynamics.pos.x < SAFETY_GAP_M {
                v = v.min(o.velocity - CORRECTION_MPS);
            }
        }
        dynamics.set_velocity(v, dt);
        dynamics.advance(dt);
        out
    }

    fn follow(
        &mut self,
        now_ms: u64,
        tgt: Projected,
        dynamics: &mut VehicleDynamics,
        world: &Knowledge,
        out: &mut Vec<Action>,
    ) -> f64 {
        let gap = tgt.rear() - dynamics.pos.x;
        if let Some(ms) = self.make_space.as_mut() {
            let requester = world.project(ms.awaiting, now_ms);
            if requester.is_some_and(|r| matches!(r.mode, WireMode::Form | WireMode::Follow(_))) {
                ms.deadline = now_ms + MAKE_SPACE_TIMEOUT_MS;
            }
            if now_ms >= ms.deadline {
                self.make_space = None;
                self.restart_approach(DESIRED_GAP_M);
            } else if !ms.ok_sent {
                let deficit = (ms.reserve - gap).max(0.0);
                let secured = gap >= ms.reserve - SLOT_TOLERANCE_M
                    || requester.is_some_and(|r| {
                        ((tgt.rear() - r.x) - DESIRED_GAP_M).abs() >= deficit
                    });
                if secured {
                    ms.ok_sent = true;
                    out.push(Action::Send {
                        dest: NodeId::LEAD,
                        payload: Payload::Ok {
                            requester: ms.awaiting,
                        },
                    });
                }
            } else if let Some(r) = requester {
                let slotted = matches!(r.mode, WireMode::Follow(_))
                    && tgt.rear() - r.x >= SAFETY_GAP_M - SLOT_TOLERANCE_M
                    && r.rear() > dynamics.pos.x;
                if slotted {
                    self.make_space = None;
                    self.change_mode(PlatoonMode::Follow(r.id), "make-space done", out);
                    self.restart_approach(DESIRED_GAP_M);
                    return tgt.velocity;
                }
            }
        }
        match self.phase {
            Phase::Approach => {
                let err = dynamics.pos.x - (tgt.rear() - self.desired_gap);
                if err > SLOT_TOLERANCE_M {
                    tgt.velocity - CORRECTION_MPS
                } else if err < -SLOT_TOLERANCE_M {
                    tgt.velocity + CORRECTION_MPS
                } else {
                    if dynamics.pos.lane == Lane::Right {
                        self.phase = Phase::Settled;
                    } else if tgt.lane == Lane::Right
                        && right_lane_clear(self.me, dynamics, world, now_ms)
                    {
                        dynamics.pos.lane = Lane::Right;
                        self.phase = Phase::Settled;
                    }
                    tgt.velocity
                }
            }
            Phase::Settled => {
                if gap > self.desired_gap + GAP_BAND_M {
                    tgt.velocity + CORRECTION_MPS
                } else if gap < self.desired_gap - GAP_BAND_M {
                    tgt.velocity - CORRECTION_MPS
                } else {
                    tgt.velocity
                }
            }
        }
    }
}

fn right_lane_clear(me: NodeId, d: &VehicleDynamics, world: &Knowledge, now_ms: u64) -> bool {
    world.projected(now_ms).all(|o| {
        o.id == me
            || o.lane != Lane::Right
            || o.rear() >= d.pos.x + MERGE_CLEARANCE_M
            || o.x <= d.rear() - MERGE_CLEARANCE_M
    })
}
