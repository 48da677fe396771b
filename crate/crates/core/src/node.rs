//! One vehicle's protocol stack: timers, forwarding scheme, routing and the
//! platoon controller, driven by `receive` and `poll`. Transmissions are queued
//! in an outbox that the transport drains.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::latency_echo_decision;
use crate::net::{Lane, NodeId};
use crate::olsr::{
    compute_routes, forward_decision, generate_tc, route_unicast, DupCache, ForwardDecision,
    NeighborTable, RoutingTable, TcUpdate, TieBreak, TopologyTable, UnicastDecision,
};
use crate::packets::{Dest, Packet, PacketKind, Payload, SeqCounter};
use crate::platoon::{
    Action, CommandError, FollowerController, Knowledge, LeadController, LeadDriver, Phase,
    PlatoonMode, VehicleDynamics,
};
use crate::rba::{rba_on_receive, relay_copy, CacheTable, RbaDecision};

/// How long the lead remembers send times for latency matching.
const ECHO_WINDOW_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rba,
    Mpr,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rba => "rba",
            Scheme::Mpr => "mpr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub scheme: Scheme,
    pub normal_ms: u64,
    pub hello_ms: u64,
    pub tc_ms: u64,
    pub neighbor_hold_ms: u64,
    pub topology_hold_ms: u64,
    pub tie: TieBreak,
    pub form_timeout_ms: u64,
    /// Echo one in this many NORMALs heard directly from the lead.
    pub echo_every: u32,
    /// How long a special packet without a route is kept for retry.
    pub special_hold_ms: u64,
    pub seed: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            scheme: Scheme::Mpr,
            normal_ms: 10,
            hello_ms: 20,
            tc_ms: 30,
            neighbor_hold_ms: 100,
            topology_hold_ms: 90,
            tie: TieBreak::Random,
            form_timeout_ms: 8000,
            echo_every: 10,
            special_hold_ms: 1000,
            seed: 0,
        }
    }
}

/// A queued transmission. `link` is the link-layer destination: a broadcast
/// to everything in range or a single neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub link: Dest,
    pub packet: Packet,
    /// Originated here rather than relayed.
    pub origin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    /// A special packet sent by this node.
    Originated { kind: PacketKind, seq: u32, dest: Dest, payload: Payload },
    /// A special packet reached its destination application.
    Delivered { kind: PacketKind, source: NodeId, seq: u32 },
    /// A NORMAL heard for the first time (`fresh`) or again.
    Received { source: NodeId, seq: u32, fresh: bool },
    Undeliverable { kind: PacketKind, seq: u32, dest: Dest },
    ModeChanged { from: PlatoonMode, to: PlatoonMode, reason: &'static str },
    TrainChanged { train: Vec<NodeId> },
    JoinDeclined { requester: NodeId },
    JoinAborted { requester: NodeId, reason: &'static str },
    CommandRejected { verb: &'static str, error: CommandError },
    Latency { seq: u32, rtt_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Join,
    Leave,
}

#[derive(Debug, Clone)]
enum Role {
    Lead {
        ctl: LeadController,
        driver: LeadDriver,
        sent_at: BTreeMap<u32, u64>,
    },
    Follower(FollowerController),
}

#[derive(Debug, Clone)]
struct Held {
    packet: Packet,
    until: u64,
}

/// Read-only view of a node for snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeView {
    pub id: NodeId,
    pub x: f64,
    pub lane: Lane,
    pub v: f64,
    pub mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<NodeId>,
    pub length: f64,
    pub settled: bool,
    pub mprs: Vec<NodeId>,
    pub neighbors: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Node {
    id: NodeId,
    cfg: NodeConfig,
    rng: ChaCha8Rng,
    dynamics: VehicleDynamics,
    role: Role,
    knowledge: Knowledge,
    seq: SeqCounter,
    rba_normal: CacheTable,
    rba_special: CacheTable,
    range_neighbors: Vec<NodeId>,
    nb: NeighborTable,
    topo: TopologyTable,
    routes: RoutingTable,
    routes_dirty: bool,
    dup: DupCache,
    held: Vec<Held>,
    echo_count: u32,
    next_normal: u64,
    next_hello: u64,
    next_tc: u64,
    last_poll: Option<u64>,
    outbox: Vec<Outgoing>,
    events: Vec<NodeEvent>,
}

impl Node {
    pub fn new(id: NodeId, cfg: NodeConfig, dynamics: VehicleDynamics) -> Node {
        let role = if id.is_lead() {
            Role::Lead {
                ctl: LeadController::default(),
                driver: LeadDriver::default(),
                sent_at: BTreeMap::new(),
            }
        } else {
            Role::Follower(FollowerController::new(id, cfg.form_timeout_ms))
        };
        let seed = cfg.seed ^ (id.get() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Node {
            id,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dynamics,
            role,
            knowledge: Knowledge::default(),
            seq: SeqCounter::default(),
            rba_normal: CacheTable::new(),
            rba_special: CacheTable::new(),
            range_neighbors: Vec::new(),
            nb: NeighborTable::new(id, cfg.neighbor_hold_ms, cfg.tie),
            topo: TopologyTable::new(cfg.topology_hold_ms),
            routes: RoutingTable::default(),
            routes_dirty: false,
            dup: DupCache::new(),
            held: Vec::new(),
            echo_count: 0,
            next_normal: 0,
            next_hello: 0,
            next_tc: 0,
            last_poll: None,
            outbox: Vec::new(),
            events: Vec::new(),
            cfg,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn dynamics(&self) -> &VehicleDynamics {
        &self.dynamics
    }

    pub fn mode(&self) -> PlatoonMode {
        match &self.role {
            Role::Lead { .. } => PlatoonMode::Lead,
            Role::Follower(f) => f.mode(),
        }
    }

    pub fn follower(&self) -> Option<&FollowerController> {
        match &self.role {
            Role::Follower(f) => Some(f),
            Role::Lead { .. } => None,
        }
    }

    pub fn lead(&self) -> Option<&LeadController> {
        match &self.role {
            Role::Lead { ctl, .. } => Some(ctl),
            Role::Follower(_) => None,
        }
    }

    pub fn neighbor_table(&self) -> &NeighborTable {
        &self.nb
    }

    pub fn topology(&self) -> &TopologyTable {
        &self.topo
    }

    pub fn routes(&mut self, now_ms: u64) -> &RoutingTable {
        self.refresh_routes(now_ms);
        &self.routes
    }

    /// Neighbors in radio range, used for relaying in RBA mode.
    pub fn set_range_neighbors(&mut self, neighbors: Vec<NodeId>) {
        self.range_neighbors = neighbors;
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn view(&self) -> NodeView {
        let mode = self.mode();
        NodeView {
            id: self.id,
            x: self.dynamics.pos.x,
            lane: self.dynamics.pos.lane,
            v: self.dynamics.velocity,
            mode: mode.name(),
            target: mode.target(),
            length: self.dynamics.length,
            settled: self.follower().is_some_and(|f| f.phase() == Phase::Settled),
            mprs: self.nb.mprs().into_iter().collect(),
            neighbors: match self.cfg.scheme {
                Scheme::Mpr => self.nb.symmetric_neighbors().collect(),
                Scheme::Rba => self.range_neighbors.clone(),
            },
        }
    }

    /// Operator or script request.
    pub fn command(&mut self, now_ms: u64, verb: Verb) -> Result<(), CommandError> {
        let info = self.dynamics.info(self.mode().wire());
        let Role::Follower(f) = &mut self.role else {
            return Err(CommandError::NotAFollower);
        };
        let res = match verb {
            Verb::Join => f.request_join(now_ms, info),
            Verb::Leave => f.leave(&mut self.dynamics),
        };
        match res {
            Ok(actions) => {
                self.apply(now_ms, actions);
                Ok(())
            }
            Err(error) => {
                let verb = match verb {
                    Verb::Join => "JOIN",
                    Verb::Leave => "LEAVE",
                };
                self.events.push(NodeEvent::CommandRejected { verb, error });
                Err(error)
            }
        }
    }

    pub fn poll(&mut self, now_ms: u64) {
        let dt = self.last_poll.map_or(0.0, |t| now_ms.saturating_sub(t) as f64 / 1000.0);
        self.last_poll = Some(now_ms);

        if self.cfg.scheme == Scheme::Mpr {
            if self.nb.expire(now_ms, &mut self.rng) {
                self.routes_dirty = true;
            }
            if self.topo.expire(now_ms) {
                self.routes_dirty = true;
            }
            if now_ms >= self.next_hello {
                self.next_hello = now_ms + self.cfg.hello_ms;
                let hello = self.nb.generate_hello();
                self.originate_broadcast(Payload::Hello(hello));
            }
            if now_ms >= self.next_tc {
                self.next_tc = now_ms + self.cfg.tc_ms;
                if let Some(tc) = generate_tc(&self.nb) {
                    self.originate_broadcast(Payload::Tc(tc));
                }
            }
        }
        self.retry_held(now_ms);

        let actions = match &mut self.role {
            Role::Lead { ctl, driver, .. } => {
                let v = driver.next_velocity(self.dynamics.pos.x, dt, &mut self.rng);
                self.dynamics.set_velocity(v, dt);
                self.dynamics.advance(dt);
                ctl.poll(now_ms)
            }
            Role::Follower(f) => f.tick(now_ms, &mut self.dynamics, &self.knowledge, dt),
        };
        self.apply(now_ms, actions);

        if now_ms >= self.next_normal {
            self.next_normal = now_ms + self.cfg.normal_ms;
            let info = self.dynamics.info(self.mode().wire());
            let seq = self.originate_broadcast(Payload::Normal(info));
            if let Role::Lead { sent_at, .. } = &mut self.role {
                sent_at.insert(seq, now_ms);
                while sent_at
                    .first_key_value()
                    .is_some_and(|(_, &t)| t + ECHO_WINDOW_MS < now_ms)
                {
                    sent_at.pop_first();
                }
            }
        }
    }

    pub fn receive(&mut self, now_ms: u64, pkt: Packet) {
        match pkt.kind() {
            PacketKind::Hello => self.on_hello(now_ms, &pkt),
            PacketKind::Tc => self.on_tc(now_ms, pkt),
            PacketKind::Normal => self.on_normal(now_ms, pkt),
            _ => self.on_special(now_ms, pkt),
        }
    }

    fn originate_broadcast(&mut self, payload: Payload) -> u32 {
        let kind = payload.kind();
        let seq = self.seq.next(kind);
        let packet = Packet::new(self.id, seq, Dest::Broadcast, payload);
        self.outbox.push(Outgoing {
            link: Dest::Broadcast,
            packet,
            origin: true,
        });
        seq
    }

    fn refresh_routes(&mut self, now_ms: u64) {
        if self.routes_dirty {
            self.routes = compute_routes(&self.nb, &self.topo, now_ms);
            self.routes_dirty = false;
        }
    }

    /// Point-to-point copies to every symmetric neighbor except the previous hop and the source.
    fn mpr_relay(&mut self, pkt: &Packet) {
        let copy = relay_copy(pkt, self.id);
        let skip = [pkt.header.prev_hop, pkt.source()];
        let targets: Vec<NodeId> = self
            .nb
            .symmetric_neighbors()
            .filter(|n| !skip.contains(n))
            .collect();
        for n in targets {
            self.outbox.push(Outgoing {
                link: Dest::Node(n),
                packet: copy.clone(),
                origin: false,
            });
        }
    }

    /// Point-to-point copies to every neighbor in range except the previous hop.
    fn rba_relay(&mut self, pkt: &Packet) {
        let copy = relay_copy(pkt, self.id);
        for &n in &self.range_neighbors {
            if n != pkt.header.prev_hop {
                self.outbox.push(Outgoing {
                    link: Dest::Node(n),
                    packet: copy.clone(),
                    origin: false,
                });
            }
        }
    }

    fn on_hello(&mut self, now_ms: u64, pkt: &Packet) {
        if self.cfg.scheme != Scheme::Mpr {
            return;
        }
        let Payload::Hello(hello) = &pkt.payload else {
            return;
        };
        if let Ok(true) = self.nb.process_hello(pkt.source(), hello, now_ms, &mut self.rng) {
            self.routes_dirty = true;
        }
    }

    fn on_tc(&mut self, now_ms: u64, pkt: Packet) {
        if self.cfg.scheme != Scheme::Mpr {
            return;
        }
        let decision = forward_decision(self.id, self.nb.selectors(), &mut self.dup, &pkt);
        if decision.is_fresh() {
            if let Payload::Tc(tc) = &pkt.payload {
                if self.topo.process_tc(pkt.source(), tc, now_ms) != TcUpdate::Ignored {
                    self.routes_dirty = true;
                }
            }
        }
        if let ForwardDecision::Retransmit { .. } = decision {
            self.mpr_relay(&pkt);
        }
    }

    fn on_normal(&mut self, now_ms: u64, pkt: Packet) {
        if pkt.source() == self.id {
            if let Role::Lead { sent_at, .. } = &mut self.role {
                if let Some(t) = sent_at.remove(&pkt.seq()) {
                    self.events.push(NodeEvent::Latency {
                        seq: pkt.seq(),
                        rtt_ms: now_ms - t,
                    });
                }
            }
            return;
        }
        let fresh = match self.cfg.scheme {
            Scheme::Rba => {
                let d = rba_on_receive(self.id, &mut self.rba_normal, &pkt, &mut self.rng);
                if d.forwards() {
                    self.rba_relay(&pkt);
                }
                d == RbaDecision::ForwardNew
            }
            Scheme::Mpr => {
                let d = forward_decision(self.id, self.nb.selectors(), &mut self.dup, &pkt);
                if let ForwardDecision::Retransmit { .. } = d {
                    self.mpr_relay(&pkt);
                }
                d.is_fresh()
            }
        };
        self.events.push(NodeEvent::Received {
            source: pkt.source(),
            seq: pkt.seq(),
            fresh,
        });
        if !fresh {
            return;
        }
        if let Payload::Normal(info) = pkt.payload {
            self.knowledge.update(pkt.source(), info, now_ms);
            if let Role::Lead { ctl, .. } = &mut self.role {
                let actions = ctl.on_member_info(now_ms, pkt.source(), info.mode);
                self.apply(now_ms, actions);
            }
        }
        if self.cfg.scheme == Scheme::Mpr
            && latency_echo_decision(&pkt, &mut self.echo_count, self.cfg.echo_every)
        {
            self.outbox.push(Outgoing {
                link: Dest::Node(NodeId::LEAD),
                packet: relay_copy(&pkt, self.id),
                origin: false,
            });
        }
    }

    fn on_special(&mut self, now_ms: u64, mut pkt: Packet) {
        let for_me = pkt.header.dest == Dest::Node(self.id);
        match self.cfg.scheme {
            Scheme::Rba => {
                let d = rba_on_receive(self.id, &mut self.rba_special, &pkt, &mut self.rng);
                if for_me {
                    if d == RbaDecision::ForwardNew {
                        self.deliver(now_ms, pkt);
                    }
                } else if d.forwards() {
                    self.rba_relay(&pkt);
                }
            }
            Scheme::Mpr => {
                if for_me {
                    self.deliver(now_ms, pkt);
                    return;
                }
                self.refresh_routes(now_ms);
                match route_unicast(self.id, &self.routes, &mut pkt) {
                    UnicastDecision::ForwardTo(next) => self.outbox.push(Outgoing {
                        link: Dest::Node(next),
                        packet: pkt,
                        origin: false,
                    }),
                    UnicastDecision::DeliverLocal => self.deliver(now_ms, pkt),
                    UnicastDecision::NoRoute => {
                        pkt.header.prev_hop = self.id;
                        self.held.push(Held {
                            packet: pkt,
                            until: now_ms + self.cfg.special_hold_ms,
                        });
                    }
                }
            }
        }
    }

    fn send_special(&mut self, now_ms: u64, dest: NodeId, payload: Payload) {
        let kind = payload.kind();
        let seq = self.seq.next(kind);
        self.events.push(NodeEvent::Originated {
            kind,
            seq,
            dest: Dest::Node(dest),
            payload: payload.clone(),
        });
        let mut packet = Packet::new(self.id, seq, Dest::Node(dest), payload);
        match self.cfg.scheme {
            Scheme::Rba => self.outbox.push(Outgoing {
                link: Dest::Broadcast,
                packet,
                origin: true,
            }),
            Scheme::Mpr => {
                self.refresh_routes(now_ms);
                match route_unicast(self.id, &self.routes, &mut packet) {
                    UnicastDecision::ForwardTo(next) => self.outbox.push(Outgoing {
                        link: Dest::Node(next),
                        packet,
                        origin: true,
                    }),
                    UnicastDecision::DeliverLocal => self.deliver(now_ms, packet),
                    UnicastDecision::NoRoute => self.held.push(Held {
                        packet,
                        until: now_ms + self.cfg.special_hold_ms,
                    }),
                }
            }
        }
    }

    fn retry_held(&mut self, now_ms: u64) {
        if self.held.is_empty() {
            return;
        }
        self.refresh_routes(now_ms);
        for h in std::mem::take(&mut self.held) {
            let mut packet = h.packet;
            match route_unicast(self.id, &self.routes, &mut packet) {
                UnicastDecision::ForwardTo(next) => self.outbox.push(Outgoing {
                    link: Dest::Node(next),
                    origin: packet.source() == self.id,
                    packet,
                }),
                UnicastDecision::DeliverLocal => self.deliver(now_ms, packet),
                UnicastDecision::NoRoute if now_ms < h.until => self.held.push(Held {
                    packet,
                    until: h.until,
                }),
                UnicastDecision::NoRoute => self.events.push(NodeEvent::Undeliverable {
                    kind: packet.kind(),
                    seq: packet.seq(),
                    dest: packet.header.dest,
                }),
            }
        }
    }

    /// Hands a special packet addressed to this node to the platoon controller.
    fn deliver(&mut self, now_ms: u64, pkt: Packet) {
        let from = pkt.source();
        self.events.push(NodeEvent::Delivered {
            kind: pkt.kind(),
            source: from,
            seq: pkt.seq(),
        });
        let own_x = self.dynamics.pos.x;
        let actions = match &mut self.role {
            Role::Lead { ctl, .. } => match pkt.payload {
                Payload::Join(info) => {
                    self.knowledge.update(from, info, now_ms);
                    let me = self.id;
                    let knowledge = &self.knowledge;
                    ctl.on_join(now_ms, from, &info, |m| {
                        if m == me {
                            Some(own_x)
                        } else {
                            knowledge.project(m, now_ms).map(|p| p.x)
                        }
                    })
                }
                Payload::Ok { requester } => ctl.on_ok(from, requester),
                Payload::AckJoin { target } => ctl.on_ack_join(from, target),
                Payload::Leave => ctl.on_leave(now_ms, from),
                _ => Vec::new(),
            },
            Role::Follower(f) => match pkt.payload {
                Payload::AckJoin { target } if from == NodeId::LEAD => f.on_ack_join(target),
                Payload::Notify(n) if from == NodeId::LEAD => f.on_notify(now_ms, &n),
                _ => Vec::new(),
            },
        };
        self.apply(now_ms, actions);
    }

    fn apply(&mut self, now_ms: u64, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { dest, payload } => self.send_special(now_ms, dest, payload),
                Action::ModeChanged { from, to, reason } => {
                    self.events.push(NodeEvent::ModeChanged { from, to, reason })
                }
                Action::TrainChanged(train) => self.events.push(NodeEvent::TrainChanged { train }),
                Action::JoinDeclined { requester } => {
                    self.events.push(NodeEvent::JoinDeclined { requester })
                }
                Action::JoinAborted { requester, reason } => {
                    self.events.push(NodeEvent::JoinAborted { requester, reason })
                }
            }
        }
    }
}
