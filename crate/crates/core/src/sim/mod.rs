//! Deterministic in-process scenario driver on a 1 ms virtual clock.

pub mod live;
pub mod log;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;

use crate::config::{ScenarioConfig, TimedCommand};
use crate::control::{ControlCommand, ControlError, ControlReply, ControlVerb};
use crate::metrics::{ReceiveRecord, Record, RunReport, SendRecord, Tally};
use crate::net::{DeliveryOutcome, Lane, LinkStats, Medium, MediumError, NodeId};
use crate::node::{Node, NodeEvent, NodeView, Scheme, Verb};
use crate::packets::{Packet, PacketKind};
use crate::platoon::{overlaps, PendingJoin, Script, ScriptedVerb, VehicleDynamics, LEAD_LENGTH_M};

pub use live::run_live;
pub use log::{EventLog, SimEvent};

pub const SNAPSHOT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub schema: u32,
    pub t_ms: u64,
    pub mode: Scheme,
    pub paused: bool,
    pub vehicles: Vec<NodeView>,
    pub train: Vec<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending_join: Option<PendingJoin>,
}

#[derive(Debug)]
struct InFlight {
    at: u64,
    order: u64,
    to: NodeId,
    bytes: Vec<u8>,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

#[derive(Debug)]
pub struct Simulation {
    cfg: ScenarioConfig,
    now_ms: u64,
    nodes: Vec<Node>,
    medium: Medium,
    in_flight: BinaryHeap<Reverse<InFlight>>,
    order: u64,
    script: Option<Script>,
    commands: VecDeque<TimedCommand>,
    paused: bool,
    tally: Tally,
    log: EventLog,
    overlaps: u64,
}

impl Simulation {
    /// Builds the scenario with an in-memory event log.
    pub fn new(cfg: ScenarioConfig) -> Result<Simulation, MediumError> {
        let log = EventLog::memory(cfg.log_level);
        Self::with_log(cfg, log)
    }

    pub fn with_log(cfg: ScenarioConfig, log: EventLog) -> Result<Simulation, MediumError> {
        let mut medium_cfg = cfg.medium.clone();
        medium_cfg.rng_seed ^= cfg.seed;
        let mut medium = Medium::new(medium_cfg)?;
        let node_cfg = cfg.node_config();
        // The lead is always created first.
        let mut nodes = vec![Node::new(
            NodeId::LEAD,
            node_cfg.clone(),
            VehicleDynamics::new(cfg.lead_x, Lane::Right, cfg.initial_speed, LEAD_LENGTH_M),
        )];
        for k in 0..cfg.n_followers {
            let id = NodeId::new(k as u16 + 2).expect("small id");
            nodes.push(Node::new(
                id,
                node_cfg.clone(),
                VehicleDynamics::new(
                    cfg.follower_start(k),
                    Lane::Left,
                    cfg.initial_speed,
                    cfg.follower_length(k),
                ),
            ));
        }
        for n in &nodes {
            medium.set_position(n.id(), n.dynamics().pos);
        }
        let mut commands: Vec<TimedCommand> = cfg.commands.clone();
        commands.sort_by_key(|c| c.at_ms);
        let mut sim = Simulation {
            script: cfg.scripted.then(|| Script::new(cfg.n_followers, cfg.duration_ms())),
            commands: commands.into(),
            now_ms: 0,
            nodes,
            medium,
            in_flight: BinaryHeap::new(),
            order: 0,
            paused: false,
            tally: Tally::default(),
            log,
            overlaps: 0,
            cfg,
        };
        sim.refresh_neighbors();
        let started = SimEvent::Started {
            mode: sim.cfg.mode.name(),
            n_vehicles: sim.cfg.n_vehicles(),
            seed: sim.cfg.seed,
        };
        sim.log.sim_event(0, &started);
        Ok(sim)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn is_done(&self) -> bool {
        self.now_ms >= self.cfg.duration_ms()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.get() as usize - 1)
    }

    pub fn lead(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn train(&self) -> Vec<NodeId> {
        self.lead().lead().map(|l| l.train().to_vec()).unwrap_or_default()
    }

    pub fn link_stats(&self) -> LinkStats {
        self.medium.stats()
    }

    pub fn tally(&self) -> &Tally {
        &self.tally
    }

    /// Same-lane overlaps seen so far, counted per pair and tick.
    pub fn overlap_count(&self) -> u64 {
        self.overlaps
    }

    pub fn event_log(&self) -> Option<&[u8]> {
        self.log.contents()
    }

    pub fn report(&self) -> RunReport {
        self.tally
            .report(self.cfg.mode, self.cfg.n_vehicles(), self.now_ms as f64 / 1000.0)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            schema: SNAPSHOT_SCHEMA,
            t_ms: self.now_ms,
            mode: self.cfg.mode,
            paused: self.paused,
            vehicles: self.nodes.iter().map(Node::view).collect(),
            train: self.train(),
            pending_join: self.lead().lead().and_then(|l| l.pending().copied()),
        }
    }

    /// Runs to the configured end and writes the closing log line.
    pub fn run_to_end(&mut self) -> RunReport {
        while !self.is_done() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(&mut self) -> RunReport {
        let fin = SimEvent::Finished {
            total_tx: self.tally.total_tx,
        };
        self.log.sim_event(self.now_ms, &fin);
        if let Err(e) = self.log.flush() {
            ::log::error!("event log flush failed: {e}");
        }
        self.report()
    }

    pub fn handle_command(&mut self, cmd: ControlCommand) -> ControlReply {
        self.apply_command(cmd, false)
    }

    fn apply_command(&mut self, cmd: ControlCommand, scripted: bool) -> ControlReply {
        let result = self.execute(cmd);
        if cmd.verb != ControlVerb::Snapshot {
            let ev = SimEvent::Command {
                verb: cmd.verb,
                target: cmd.node,
                scripted,
                rejected: result.as_ref().err().cloned(),
            };
            self.log.sim_event(self.now_ms, &ev);
            self.drain_events();
        }
        match result {
            Ok(Some(snap)) => ControlReply::Snapshot(Box::new(snap)),
            Ok(None) => ControlReply::ack(cmd),
            Err(e) => ControlReply::Error(e),
        }
    }

    fn execute(&mut self, cmd: ControlCommand) -> Result<Option<Snapshot>, ControlError> {
        let verb = match cmd.verb {
            ControlVerb::Snapshot => return Ok(Some(self.snapshot())),
            ControlVerb::Pause => {
                self.paused = true;
                return Ok(None);
            }
            ControlVerb::Resume => {
                self.paused = false;
                return Ok(None);
            }
            ControlVerb::Join => Verb::Join,
            ControlVerb::Leave => Verb::Leave,
        };
        let id = cmd
            .node
            .ok_or_else(|| ControlError::BadRequest("JOIN and LEAVE need a node".into()))?;
        if id.get() as usize > self.nodes.len() {
            return Err(ControlError::UnknownNode(id.get()));
        }
        if id.is_lead() {
            return Err(ControlError::NotAFollower);
        }
        if let Some(s) = self.script.as_mut() {
            s.release(id);
        }
        let now = self.now_ms;
        let node = &mut self.nodes[id.get() as usize - 1];
        let mode = node.mode();
        node.command(now, verb).map(|_| None).map_err(|_| {
            ControlError::IllegalState(format!("node {id} is {mode}"))
        })
    }

    /// Advances the clock by one millisecond.
    pub fn step(&mut self) {
        let t = self.now_ms;
        self.deliver_due(t);

        while self.commands.front().is_some_and(|c| c.at_ms <= t) {
            let c = self.commands.pop_front().expect("front exists");
            self.apply_command(c.command(), true);
        }
        if let Some(script) = self.script.as_mut() {
            for n in self.nodes.iter_mut().skip(1) {
                if let Some(v) = script.due(t, n.id(), n.mode()) {
                    let verb = match v {
                        ScriptedVerb::Join => Verb::Join,
                        ScriptedVerb::Leave => Verb::Leave,
                    };
                    let res = n.command(t, verb);
                    let ev = SimEvent::Command {
                        verb: match v {
                            ScriptedVerb::Join => ControlVerb::Join,
                            ScriptedVerb::Leave => ControlVerb::Leave,
                        },
                        target: Some(n.id()),
                        scripted: true,
                        rejected: res
                            .err()
                            .map(|e| ControlError::IllegalState(e.to_string())),
                    };
                    self.log.sim_event(t, &ev);
                }
            }
        }

        for n in &mut self.nodes {
            n.poll(t);
        }
        self.drain_events();
        for n in &self.nodes {
            self.medium.set_position(n.id(), n.dynamics().pos);
        }
        self.refresh_neighbors();
        self.check_overlaps(t);
        self.flush(t);
        self.now_ms += 1;
    }

    fn refresh_neighbors(&mut self) {
        if self.cfg.mode != Scheme::Rba {
            return;
        }
        for i in 0..self.nodes.len() {
            let id = self.nodes[i].id();
            let nbrs = self.medium.neighbors_in_range(id);
            self.nodes[i].set_range_neighbors(nbrs);
        }
    }

    fn check_overlaps(&mut self, t: u64) {
        for i in 0..self.nodes.len() {
            for j in i + 1..self.nodes.len() {
                let (a, b) = (&self.nodes[i], &self.nodes[j]);
                if overlaps(a.dynamics(), b.dynamics()) {
                    self.overlaps += 1;
                    let ev = SimEvent::Overlap { a: a.id(), b: b.id() };
                    self.log.sim_event(t, &ev);
                }
            }
        }
    }

    fn deliver_due(&mut self, t: u64) {
        while self.in_flight.peek().is_some_and(|Reverse(f)| f.at <= t) {
            let Reverse(f) = self.in_flight.pop().expect("peeked");
            let pkt = match Packet::decode(&f.bytes) {
                Ok(p) => p,
                Err(e) => {
                    let ev = SimEvent::DecodeFailed {
                        to: f.to,
                        reason: e.to_string(),
                    };
                    self.log.sim_event(t, &ev);
                    continue;
                }
            };
            let (kind, source, seq) = (pkt.kind(), pkt.source(), pkt.seq());
            let idx = f.to.get() as usize - 1;
            self.nodes[idx].receive(t, pkt);
            let events = self.nodes[idx].take_events();
            let fresh = events
                .iter()
                .any(|e| matches!(e, NodeEvent::Received { fresh: true, .. }));
            self.record(
                t,
                Record::Receive(ReceiveRecord {
                    receiver: f.to,
                    source,
                    seq,
                    kind,
                    t_ms: t,
                    size: f.bytes.len(),
                    fresh,
                }),
            );
            self.log_events(t, f.to, events);
        }
    }

    fn drain_events(&mut self) {
        let t = self.now_ms;
        for i in 0..self.nodes.len() {
            let events = self.nodes[i].take_events();
            if !events.is_empty() {
                let id = self.nodes[i].id();
                self.log_events(t, id, events);
            }
        }
    }

    fn log_events(&mut self, t: u64, node: NodeId, events: Vec<NodeEvent>) {
        for ev in events {
            if let NodeEvent::Latency { seq, rtt_ms } = ev {
                self.record(t, Record::Latency { t_ms: t, seq, rtt_ms });
            }
            self.log.node_event(t, node, &ev);
        }
    }

    fn record(&mut self, t: u64, rec: Record) {
        self.tally.add(&rec);
        self.log.record(t, &rec);
    }

    fn flush(&mut self, t: u64) {
        for i in 0..self.nodes.len() {
            let id = self.nodes[i].id();
            for out in self.nodes[i].take_outbox() {
                let bytes = out.packet.encode();
                let kind = out.packet.kind();
                let reach = (out.origin && kind == PacketKind::Normal)
                    .then(|| self.medium.reachable_count(id));
                self.record(
                    t,
                    Record::Send(SendRecord {
                        node: id,
                        source: out.packet.source(),
                        seq: out.packet.seq(),
                        kind,
                        t_ms: t,
                        size: bytes.len(),
                        origin: out.origin,
                        reach,
                    }),
                );
                let outcomes = self
                    .medium
                    .transmit(t, id, out.link)
                    .expect("all nodes are placed on the medium");
                for o in outcomes {
                    if let DeliveryOutcome::Delivered { to, at_ms, .. } = o {
                        self.order += 1;
                        self.in_flight.push(Reverse(InFlight {
                            at: at_ms,
                            order: self.order,
                            to,
                            bytes: bytes.clone(),
                        }));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platoon::PlatoonMode;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    fn cfg(mode: Scheme, n: usize, secs: u64) -> ScenarioConfig {
        ScenarioConfig {
            mode,
            n_followers: n,
            duration_s: secs,
            scripted: false,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn lossless_pair_delivers_every_normal() {
        for mode in [Scheme::Rba, Scheme::Mpr] {
            let mut c = cfg(mode, 1, 2);
            c.medium.loss_max = 0.0;
            let mut sim = Simulation::new(c).unwrap();
            let r = sim.run_to_end();
            assert_eq!(r.loss_rate, 0.0, "{mode:?}");
            assert!(r.total_tx >= 400);
        }
    }

    #[test]
    fn manual_join_and_guarded_leave() {
        let mut sim = Simulation::new(cfg(Scheme::Mpr, 2, 20)).unwrap();
        for _ in 0..200 {
            sim.step();
        }
        let reply = sim.handle_command(ControlCommand::new(ControlVerb::Leave, Some(id(3))));
        assert!(matches!(reply, ControlReply::Error(ControlError::IllegalState(_))));
        let reply = sim.handle_command(ControlCommand::new(ControlVerb::Join, Some(id(3))));
        assert!(matches!(reply, ControlReply::Ack { .. }));
        assert_eq!(sim.node(id(3)).unwrap().mode(), PlatoonMode::Form);
        for _ in 0..1000 {
            sim.step();
        }
        assert_eq!(sim.node(id(3)).unwrap().mode(), PlatoonMode::Follow(id(1)));
        assert_eq!(sim.train(), vec![id(1), id(3)]);
        let reply = sim.handle_command(ControlCommand::new(ControlVerb::Join, Some(id(9))));
        assert_eq!(reply, ControlReply::Error(ControlError::UnknownNode(9)));
    }

    #[test]
    fn snapshot_json_shape() {
        let sim = Simulation::new(cfg(Scheme::Mpr, 2, 1)).unwrap();
        let v: serde_json::Value = serde_json::to_value(sim.snapshot()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["mode"], "mpr");
        assert_eq!(v["train"], serde_json::json!([1]));
        assert_eq!(v["vehicles"][0]["lane"], "RIGHT");
        assert_eq!(v["vehicles"][0]["mode"], "LEAD");
        assert_eq!(v["vehicles"][1]["mode"], "FREE");
    }
}
