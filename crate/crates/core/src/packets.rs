//! Packet kinds, headers, payloads and the fixed-width big-endian wire format
//! shared by the in-process and UDP transports. See `WIRE.md` for the layout.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Lane, NodeId};

pub const MAGIC: [u8; 2] = [0x56, 0x01];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const BROADCAST_WIRE: u16 = 0xFFFF;
pub const VEHICLE_INFO_LEN: usize = 52;
/// Encoded size of every NORMAL packet.
pub const NORMAL_PACKET_LEN: usize = HEADER_LEN + VEHICLE_INFO_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketKind {
    Hello = 0,
    Tc = 1,
    Normal = 2,
    Join = 3,
    Leave = 4,
    AckJoin = 5,
    Notify = 6,
    Ok = 7,
}

impl PacketKind {
    pub const ALL: [PacketKind; 8] = [
        PacketKind::Hello,
        PacketKind::Tc,
        PacketKind::Normal,
        PacketKind::Join,
        PacketKind::Leave,
        PacketKind::AckJoin,
        PacketKind::Notify,
        PacketKind::Ok,
    ];

    pub fn from_wire(b: u8) -> Option<PacketKind> {
        Self::ALL.get(b as usize).copied()
    }

    /// Kinds that carry a destination and travel over unicast routes.
    pub fn is_routed_unicast(self) -> bool {
        matches!(
            self,
            PacketKind::Join
                | PacketKind::Leave
                | PacketKind::AckJoin
                | PacketKind::Notify
                | PacketKind::Ok
        )
    }

    pub fn seq_class(self) -> SeqClass {
        match self {
            PacketKind::Hello => SeqClass::Hello,
            PacketKind::Tc => SeqClass::Tc,
            _ => SeqClass::Data,
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacketKind::Hello => "HELLO",
            PacketKind::Tc => "TC",
            PacketKind::Normal => "NORMAL",
            PacketKind::Join => "JOIN",
            PacketKind::Leave => "LEAVE",
            PacketKind::AckJoin => "ACK_JOIN",
            PacketKind::Notify => "NOTIFY",
            PacketKind::Ok => "OK",
        })
    }
}

/// Sequence number spaces. HELLO has none (always 0 on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqClass {
    Hello,
    Tc,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dest {
    Broadcast,
    Node(NodeId),
}

/// A node id, or the string `"broadcast"`.
impl Serialize for Dest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Dest::Broadcast => s.serialize_str("broadcast"),
            Dest::Node(n) => n.serialize(s),
        }
    }
}

impl Dest {
    fn to_wire(self) -> u16 {
        match self {
            Dest::Broadcast => BROADCAST_WIRE,
            Dest::Node(n) => n.get(),
        }
    }

    pub fn node(self) -> Option<NodeId> {
        match self {
            Dest::Broadcast => None,
            Dest::Node(n) => Some(n),
        }
    }
}

impl fmt::Display for Dest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dest::Broadcast => f.write_str("*"),
            Dest::Node(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkStatus {
    Uni = 0,
    Bi = 1,
    Mpr = 2,
}

impl LinkStatus {
    /// Symmetric links, the only ones that carry data or give access to two-hop neighbors.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, LinkStatus::Uni)
    }
}

impl fmt::Display for LinkStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkStatus::Uni => "UNI",
            LinkStatus::Bi => "BI",
            LinkStatus::Mpr => "MPR",
        })
    }
}

/// Platooning mode as advertised in vehicle information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WireMode {
    Free,
    Form,
    Follow(NodeId),
    Lead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleInfo {
    pub x: f64,
    pub lane: Lane,
    pub velocity: f64,
    pub acceleration: f64,
    pub brake: f64,
    pub throttle: f64,
    pub length: f64,
    pub mode: WireMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HelloPayload {
    pub neighbors: Vec<(NodeId, LinkStatus)>,
}

impl HelloPayload {
    pub fn status_of(&self, node: NodeId) -> Option<LinkStatus> {
        self.neighbors
            .iter()
            .find(|(n, _)| *n == node)
            .map(|&(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TcPayload {
    /// Originator's neighbor-table sequence number.
    pub tc_seq: u32,
    pub selectors: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NotifyPurpose {
    /// Open a gap behind `target` for `awaiting`.
    MakeSpace,
    /// Follow `target` from now on.
    Retarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NotifyPayload {
    pub purpose: NotifyPurpose,
    pub target: NodeId,
    pub gap_m: f64,
    pub awaiting: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Hello(HelloPayload),
    Tc(TcPayload),
    Normal(VehicleInfo),
    /// Requester's vehicle information, used for placement.
    Join(VehicleInfo),
    Leave,
    /// From the lead: the vehicle to follow. From a follower: the vehicle it now follows.
    AckJoin { target: NodeId },
    Notify(NotifyPayload),
    Ok { requester: NodeId },
}

impl Payload {
    pub fn kind(&self) -> PacketKind {
        match self {
            Payload::Hello(_) => PacketKind::Hello,
            Payload::Tc(_) => PacketKind::Tc,
            Payload::Normal(_) => PacketKind::Normal,
            Payload::Join(_) => PacketKind::Join,
            Payload::Leave => PacketKind::Leave,
            Payload::AckJoin { .. } => PacketKind::AckJoin,
            Payload::Notify(_) => PacketKind::Notify,
            Payload::Ok { .. } => PacketKind::Ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub kind: PacketKind,
    pub seq: u32,
    pub source: NodeId,
    pub prev_hop: NodeId,
    pub dest: Dest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub header: PacketHeader,
    pub payload: Payload,
}

impl Packet {
    /// A freshly originated packet: previous hop is the source.
    pub fn new(source: NodeId, seq: u32, dest: Dest, payload: Payload) -> Packet {
        Packet {
            header: PacketHeader {
                kind: payload.kind(),
                seq,
                source,
                prev_hop: source,
                dest,
            },
            payload,
        }
    }

    pub fn kind(&self) -> PacketKind {
        self.header.kind
    }

    pub fn source(&self) -> NodeId {
        self.header.source
    }

    pub fn seq(&self) -> u32 {
        self.header.seq
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + payload_len(&self.payload)
    }

    pub fn encode(&self) -> Vec<u8> {
        debug_assert_eq!(self.header.kind, self.payload.kind());
        let mut w = Writer(Vec::with_capacity(self.encoded_len()));
        w.0.extend_from_slice(&MAGIC);
        w.u8(VERSION);
        w.u8(self.header.kind as u8);
        w.u32(self.header.seq);
        w.u16(self.header.source.get());
        w.u16(self.header.prev_hop.get());
        w.u16(self.header.dest.to_wire());
        w.u16(payload_len(&self.payload) as u16);
        match &self.payload {
            Payload::Hello(h) => {
                w.u16(h.neighbors.len() as u16);
                for &(n, s) in &h.neighbors {
                    w.u16(n.get());
                    w.u8(s as u8);
                }
            }
            Payload::Tc(tc) => {
                w.u32(tc.tc_seq);
                w.u16(tc.selectors.len() as u16);
                for s in &tc.selectors {
                    w.u16(s.get());
                }
            }
            Payload::Normal(info) | Payload::Join(info) => w.vehicle(info),
            Payload::Leave => {}
            Payload::AckJoin { target } => w.u16(target.get()),
            Payload::Notify(n) => {
                w.u8(match n.purpose {
                    NotifyPurpose::MakeSpace => 0,
                    NotifyPurpose::Retarget => 1,
                });
                w.u16(n.target.get());
                w.f64(n.gap_m);
                w.u16(n.awaiting.map_or(0, NodeId::get));
            }
            Payload::Ok { requester } => w.u16(requester.get()),
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Packet, DecodeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(2)? != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(DecodeError::BadVersion(version));
        }
        let kind_byte = r.u8()?;
        let kind = PacketKind::from_wire(kind_byte).ok_or(DecodeError::BadKind(kind_byte))?;
        let seq = r.u32()?;
        let source = r.node("source")?;
        let prev_hop = r.node("prev_hop")?;
        let dest = match r.u16()? {
            BROADCAST_WIRE => Dest::Broadcast,
            n => Dest::Node(NodeId::new(n).ok_or(DecodeError::BadField("dest"))?),
        };
        let len = r.u16()? as usize;
        let body = r.take(len)?;
        if r.pos != bytes.len() {
            return Err(DecodeError::TrailingBytes);
        }
        let mut r = Reader { buf: body, pos: 0 };
        let payload = match kind {
            PacketKind::Hello => {
                let count = r.u16()? as usize;
                let mut neighbors = Vec::with_capacity(count);
                let mut seen = BTreeSet::new();
                for _ in 0..count {
                    let n = r.node("hello neighbor")?;
                    let s = match r.u8()? {
                        0 => LinkStatus::Uni,
                        1 => LinkStatus::Bi,
                        2 => LinkStatus::Mpr,
                        _ => return Err(DecodeError::BadField("link status")),
                    };
                    if !seen.insert(n) {
                        return Err(DecodeError::BadField("duplicate hello neighbor"));
                    }
                    neighbors.push((n, s));
                }
                Payload::Hello(HelloPayload { neighbors })
            }
            PacketKind::Tc => {
                let tc_seq = r.u32()?;
                let count = r.u16()? as usize;
                let selectors = (0..count)
                    .map(|_| r.node("tc selector"))
                    .collect::<Result<_, _>>()?;
                Payload::Tc(TcPayload { tc_seq, selectors })
            }
            PacketKind::Normal => Payload::Normal(r.vehicle()?),
            PacketKind::Join => Payload::Join(r.vehicle()?),
            PacketKind::Leave => Payload::Leave,
            PacketKind::AckJoin => Payload::AckJoin {
                target: r.node("ack target")?,
            },
            PacketKind::Notify => {
                let purpose = match r.u8()? {
                    0 => NotifyPurpose::MakeSpace,
                    1 => NotifyPurpose::Retarget,
                    _ => return Err(DecodeError::BadField("notify purpose")),
                };
                let target = r.node("notify target")?;
                let gap_m = r.f64()?;
                let awaiting = match r.u16()? {
                    0 => None,
                    n => Some(NodeId::new(n).ok_or(DecodeError::BadField("awaiting"))?),
                };
                Payload::Notify(NotifyPayload {
                    purpose,
                    target,
                    gap_m,
                    awaiting,
                })
            }
            PacketKind::Ok => Payload::Ok {
                requester: r.node("requester")?,
            },
        };
        if r.pos != body.len() {
            return Err(DecodeError::BadField("payload length mismatch"));
        }
        Ok(Packet {
            header: PacketHeader {
                kind,
                seq,
                source,
                prev_hop,
                dest,
            },
            payload,
        })
    }
}

fn payload_len(p: &Payload) -> usize {
    match p {
        Payload::Hello(h) => 2 + 3 * h.neighbors.len(),
        Payload::Tc(tc) => 6 + 2 * tc.selectors.len(),
        Payload::Normal(_) | Payload::Join(_) => VEHICLE_INFO_LEN,
        Payload::Leave => 0,
        Payload::AckJoin { .. } | Payload::Ok { .. } => 2,
        Payload::Notify(_) => 13,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("datagram truncated")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown packet kind {0}")]
    BadKind(u8),
    #[error("invalid field: {0}")]
    BadField(&'static str),
    #[error("trailing bytes after payload")]
    TrailingBytes,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn vehicle(&mut self, info: &VehicleInfo) {
        self.f64(info.x);
        self.u8(match info.lane {
            Lane::Right => 0,
            Lane::Left => 1,
        });
        self.f64(info.velocity);
        self.f64(info.acceleration);
        self.f64(info.brake);
        self.f64(info.throttle);
        self.f64(info.length);
        let (mode, target) = match info.mode {
            WireMode::Free => (0, 0),
            WireMode::Form => (1, 0),
            WireMode::Follow(t) => (2, t.get()),
            WireMode::Lead => (3, 0),
        };
        self.u8(mode);
        self.u16(target);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn node(&mut self, what: &'static str) -> Result<NodeId, DecodeError> {
        NodeId::new(self.u16()?).ok_or(DecodeError::BadField(what))
    }
    fn vehicle(&mut self) -> Result<VehicleInfo, DecodeError> {
        let x = self.f64()?;
        let lane = match self.u8()? {
            0 => Lane::Right,
            1 => Lane::Left,
            _ => return Err(DecodeError::BadField("lane")),
        };
        let velocity = self.f64()?;
        let acceleration = self.f64()?;
        let brake = self.f64()?;
        let throttle = self.f64()?;
        let length = self.f64()?;
        let mode_byte = self.u8()?;
        let target = self.u16()?;
        let mode = match (mode_byte, target) {
            (0, 0) => WireMode::Free,
            (1, 0) => WireMode::Form,
            (2, t) => WireMode::Follow(NodeId::new(t).ok_or(DecodeError::BadField("follow target"))?),
            (3, 0) => WireMode::Lead,
            _ => return Err(DecodeError::BadField("mode")),
        };
        Ok(VehicleInfo {
            x,
            lane,
            velocity,
            acceleration,
            brake,
            throttle,
            length,
            mode,
        })
    }
}

/// Per-source sequence counters, one per class.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter {
    tc: u32,
    data: u32,
}

impl SeqCounter {
    pub fn next(&mut self, kind: PacketKind) -> u32 {
        match kind.seq_class() {
            SeqClass::Hello => 0,
            SeqClass::Tc => {
                self.tc = self.tc.wrapping_add(1);
                self.tc
            }
            SeqClass::Data => {
                self.data = self.data.wrapping_add(1);
                self.data
            }
        }
    }
}
