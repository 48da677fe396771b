use std::fmt;

use serde::{Deserialize, Serialize};

/// Length of the simulated highway in meters.
pub const HIGHWAY_LENGTH_M: f64 = 10_000.0;
/// Lateral distance between the two lanes.
pub const LANE_WIDTH_M: f64 = 5.0;

/// Node address. `1` is always the lead truck; followers get increasing ids in spawn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct NodeId(u16);

impl NodeId {
    pub const LEAD: NodeId = NodeId(1);
    /// Largest usable id; `0xFFFF` is reserved for broadcast on the wire.
    pub const MAX: u16 = 0xFFFE;

    pub fn new(id: u16) -> Option<NodeId> {
        (1..=Self::MAX).contains(&id).then_some(NodeId(id))
    }

    pub fn get(self) -> u16 {
        self.0
    }

    pub fn is_lead(self) -> bool {
        self == Self::LEAD
    }
}

impl TryFrom<u16> for NodeId {
    type Error = String;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        NodeId::new(value).ok_or_else(|| format!("invalid node id {value}"))
    }
}

impl From<NodeId> for u16 {
    fn from(id: NodeId) -> u16 {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Lane {
    Right,
    Left,
}

impl Lane {
    /// Lateral offset of the lane centre line.
    pub fn offset(self) -> f64 {
        match self {
            Lane::Right => 0.0,
            Lane::Left => LANE_WIDTH_M,
        }
    }

    /// Inverse of [`Lane::offset`], snapping to the nearer lane.
    pub fn from_offset(y: f64) -> Lane {
        if y >= LANE_WIDTH_M / 2.0 {
            Lane::Left
        } else {
            Lane::Right
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lane::Right => "RIGHT",
            Lane::Left => "LEFT",
        })
    }
}

/// Longitudinal position (front bumper) plus lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub lane: Lane,
}

impl Position {
    pub fn new(x: f64, lane: Lane) -> Position {
        Position {
            x: x.clamp(0.0, HIGHWAY_LENGTH_M),
            lane,
        }
    }

    pub fn y(&self) -> f64 {
        self.lane.offset()
    }
}

/// Euclidean distance over `x` and the lane offset.
pub fn distance(a: Position, b: Position) -> f64 {
    distance_xy(a.x, a.y(), b.x, b.y())
}

pub fn distance_xy(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}
