//! Road-train application: kinematics, follower state machine, lead admission
//! control and the scripted scenario.

pub mod dynamics;
pub mod follower;
pub mod lead;
pub mod script;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::net::{Lane, NodeId};
use crate::packets::{Payload, VehicleInfo, WireMode};

pub use dynamics::{overlaps, speed_zone, LeadDriver, VehicleDynamics, LEAD_LENGTH_M};
pub use follower::{FollowerController, Phase};
pub use lead::{LeadController, PendingJoin};
pub use script::{Script, ScriptedVerb};

pub const DESIRED_GAP_M: f64 = 15.0;
pub const GAP_BAND_M: f64 = 5.0;
pub const CORRECTION_MPS: f64 = 5.0;
pub const SLOT_TOLERANCE_M: f64 = 0.5;
pub const SAFETY_GAP_M: f64 = 10.0;
pub const MERGE_CLEARANCE_M: f64 = 10.0;
/// Vehicle information older than this is ignored.
pub const STALE_INFO_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlatoonMode {
    Free,
    Form,
    Follow(NodeId),
    Lead,
}

impl PlatoonMode {
    pub fn name(self) -> &'static str {
        match self {
            PlatoonMode::Free => "FREE",
            PlatoonMode::Form => "FORM",
            PlatoonMode::Follow(_) => "FOLLOW",
            PlatoonMode::Lead => "LEAD",
        }
    }

    pub fn target(self) -> Option<NodeId> {
        match self {
            PlatoonMode::Follow(t) => Some(t),
            _ => None,
        }
    }

    pub fn wire(self) -> WireMode {
        match self {
            PlatoonMode::Free => WireMode::Free,
            PlatoonMode::Form => WireMode::Form,
            PlatoonMode::Follow(t) => WireMode::Follow(t),
            PlatoonMode::Lead => WireMode::Lead,
        }
    }

    /// Edges of the follower state machine.
    pub fn legal_transition(from: PlatoonMode, to: PlatoonMode) -> bool {
        use PlatoonMode::*;
        matches!(
            (from, to),
            (Free, Form) | (Form, Free) | (Form, Follow(_)) | (Follow(_), Free) | (Follow(_), Follow(_))
        )
    }
}

impl fmt::Display for PlatoonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlatoonMode::Follow(t) => write!(f, "FOLLOW({t})"),
            m => f.write_str(m.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum CommandError {
    #[error("command not allowed in the current mode")]
    IllegalState,
    #[error("the lead truck does not take join or leave commands")]
    NotAFollower,
}

/// What a controller wants the node to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { dest: NodeId, payload: Payload },
    ModeChanged { from: PlatoonMode, to: PlatoonMode, reason: &'static str },
    TrainChanged(Vec<NodeId>),
    JoinDeclined { requester: NodeId },
    JoinAborted { requester: NodeId, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Known {
    pub info: VehicleInfo,
    pub at_ms: u64,
}

/// Latest vehicle information heard from every other vehicle.
#[derive(Debug, Clone, Default)]
pub struct Knowledge {
    vehicles: BTreeMap<NodeId, Known>,
}

/// A vehicle's state projected to the current time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub id: NodeId,
    pub x: f64,
    pub lane: Lane,
    pub velocity: f64,
    pub length: f64,
    pub mode: WireMode,
}

impl Projected {
    pub fn rear(&self) -> f64 {
        self.x - self.length
    }
}

impl Knowledge {
    pub fn update(&mut self, id: NodeId, info: VehicleInfo, at_ms: u64) {
        match self.vehicles.get(&id) {
            Some(k) if k.at_ms > at_ms => {}
            _ => {
                self.vehicles.insert(id, Known { info, at_ms });
            }
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Known> {
        self.vehicles.get(&id)
    }

    pub fn project(&self, id: NodeId, now_ms: u64) -> Option<Projected> {
        let k = self.vehicles.get(&id)?;
        let age = now_ms.saturating_sub(k.at_ms);
        if age > STALE_INFO_MS {
            return None;
        }
        Some(Projected {
            id,
            x: k.info.x + k.info.velocity * age as f64 / 1000.0,
            lane: k.info.lane,
            velocity: k.info.velocity,
            length: k.info.length,
            mode: k.info.mode,
        })
    }

    pub fn projected(&self, now_ms: u64) -> impl Iterator<Item = Projected> + '_ {
        self.vehicles
            .keys()
            .filter_map(move |&id| self.project(id, now_ms))
    }
}
