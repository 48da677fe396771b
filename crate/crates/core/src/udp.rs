//! One vehicle per process, exchanging packets as UDP datagrams.
//!
//! Peers find each other through the registry file. Range and loss are applied
//! by the receiver, using the registry positions of both ends, so all nodes
//! judge a link from the same (equally stale) snapshot.

use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::Receiver;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{LogLevel, ScenarioConfig};
use crate::metrics::{ReceiveRecord, Record, SendRecord, Tally};
use crate::net::{
    distance, loss_probability, survives, Lane, LinkStats, NodeId, Position, Registry,
    RegistryEntry, RegistryError, LANE_WIDTH_M,
};
use crate::node::{Node, NodeEvent, Scheme, Verb};
use crate::packets::{Dest, Packet, PacketKind};
use crate::platoon::{Script, ScriptedVerb, VehicleDynamics, LEAD_LENGTH_M};
use crate::sim::{EventLog, SimEvent};

const MAX_DATAGRAM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Leading,
    Follow,
}

#[derive(Debug, Clone)]
pub struct UdpNodeOptions {
    pub role: NodeRole,
    pub registry: PathBuf,
    pub host: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    /// Starting position; defaults to the scenario's position for this id.
    pub x: Option<f64>,
    pub speed: Option<f64>,
    pub length: f64,
    pub scenario: ScenarioConfig,
    pub log: Option<PathBuf>,
}

impl UdpNodeOptions {
    pub fn new(role: NodeRole, registry: impl Into<PathBuf>, scenario: ScenarioConfig) -> Self {
        UdpNodeOptions {
            role,
            registry: registry.into(),
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            x: None,
            speed: None,
            length: 5.0,
            scenario,
            log: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum UdpError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("socket: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct UdpNodeSummary {
    pub id: NodeId,
    pub addr: SocketAddr,
    pub link: LinkStats,
    pub tally: Tally,
}

/// Commands and the stop flag a running node listens to.
#[derive(Debug, Clone, Default)]
pub struct NodeControl {
    pub commands: Option<Receiver<Verb>>,
    pub stop: Option<Arc<AtomicBool>>,
}

fn position_of(e: &RegistryEntry) -> Position {
    let lane = if e.y >= LANE_WIDTH_M / 2.0 { Lane::Left } else { Lane::Right };
    Position { x: e.x, lane }
}

struct Peers {
    entries: BTreeMap<NodeId, RegistryEntry>,
    addrs: BTreeMap<NodeId, SocketAddr>,
}

impl Peers {
    fn refresh(&mut self, registry: &Registry) {
        match registry.read() {
            Ok(list) => {
                self.entries = list.into_iter().map(|e| (e.node, e)).collect();
                self.addrs = self
                    .entries
                    .values()
                    .filter_map(|e| {
                        let ip: IpAddr = e.host.parse().ok().or_else(|| {
                            use std::net::ToSocketAddrs;
                            (e.host.as_str(), e.port).to_socket_addrs().ok()?.next().map(|a| a.ip())
                        })?;
                        Some((e.node, SocketAddr::new(ip, e.port)))
                    })
                    .collect();
            }
            Err(err) => log::warn!("registry read failed, keeping stale view: {err}"),
        }
    }

    fn in_range(&self, me: NodeId, range_m: f64) -> Vec<NodeId> {
        let Some(mine) = self.entries.get(&me).map(position_of) else {
            return Vec::new();
        };
        self.entries
            .values()
            .filter(|e| e.node != me && distance(mine, position_of(e)) <= range_m)
            .map(|e| e.node)
            .collect()
    }
}

/// Runs one vehicle until the scenario duration elapses or `stop` is set.
pub fn run_node(opts: UdpNodeOptions, control: NodeControl) -> Result<UdpNodeSummary, UdpError> {
    let cfg = &opts.scenario;
    let registry = Registry::new(&opts.registry);
    let bind = SocketAddr::new(opts.host, opts.port);
    let make_entry = |socket: &UdpSocket, id: NodeId, x: f64, lane: Lane| -> io::Result<RegistryEntry> {
        Ok(RegistryEntry {
            node: id,
            host: opts.host.to_string(),
            port: socket.local_addr()?.port(),
            x,
            y: lane_offset(lane),
            links: Vec::new(),
        })
    };

    // A follower must find the lead registered before it binds anything.
    if opts.role == NodeRole::Follow && !registry.read()?.iter().any(|e| e.node.is_lead()) {
        return Err(RegistryError::NoLead.into());
    }
    let socket = UdpSocket::bind(bind).map_err(|source| UdpError::Bind { addr: bind, source })?;
    socket.set_nonblocking(true)?;
    let (id, dynamics) = match opts.role {
        NodeRole::Leading => {
            registry.truncate()?;
            let x = opts.x.unwrap_or(cfg.lead_x);
            let speed = opts.speed.unwrap_or(cfg.initial_speed);
            registry.write(&make_entry(&socket, NodeId::LEAD, x, Lane::Right)?)?;
            (NodeId::LEAD, VehicleDynamics::new(x, Lane::Right, speed, LEAD_LENGTH_M))
        }
        NodeRole::Follow => {
            let mut placed = None;
            let entry = registry.register_follower(|id| {
                let k = id.get() as usize - 2;
                let x = opts.x.unwrap_or_else(|| cfg.follower_start(k.min(cfg.n_followers.saturating_sub(1))));
                placed = Some(x);
                make_entry(&socket, id, x, Lane::Left).expect("socket has an address")
            })?;
            let x = placed.expect("entry was built");
            let speed = opts.speed.unwrap_or(cfg.initial_speed);
            (entry.node, VehicleDynamics::new(x, Lane::Left, speed, opts.length))
        }
    };
    let addr = socket.local_addr()?;
    log::info!("node {id} up on {addr}");

    let mut log = match &opts.log {
        // Per-node logs feed the report, which needs every transmission.
        Some(path) => EventLog::stream(LogLevel::Full, Box::new(File::create(path)?)),
        None => EventLog::memory(LogLevel::Off),
    };
    log.node_sim_event(
        0,
        id,
        &SimEvent::NodeUp {
            mode: cfg.mode.name(),
            port: addr.port(),
        },
    );

    let mut node = Node::new(id, cfg.node_config(), dynamics);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.medium.rng_seed ^ cfg.seed ^ u64::from(id.get()));
    let mut script = (cfg.scripted && !id.is_lead()).then(|| Script::new(cfg.n_followers, cfg.duration_ms()));
    let mut peers = Peers {
        entries: BTreeMap::new(),
        addrs: BTreeMap::new(),
    };
    peers.refresh(&registry);
    let mut link = LinkStats::default();
    let mut tally = Tally::default();
    let mut buf = [0u8; MAX_DATAGRAM];
    let start = Instant::now();
    let (mut next_read, mut next_write) = (0u64, 0u64);
    let duration_ms = cfg.duration_ms();

    loop {
        let now = start.elapsed().as_millis() as u64;
        if now >= duration_ms || control.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        if now >= next_read {
            next_read = now + cfg.timers.registry_read_ms;
            peers.refresh(&registry);
            if cfg.mode == Scheme::Rba {
                node.set_range_neighbors(peers.in_range(id, cfg.medium.range_m));
            }
        }
        if now >= next_write {
            next_write = now + cfg.timers.registry_write_s * 1000;
            let pos = node.dynamics().pos;
            let view = node.view();
            let mut entry = make_entry(&socket, id, pos.x, pos.lane)?;
            entry.links = view.neighbors;
            if let Err(e) = registry.write(&entry) {
                log::warn!("registry write failed: {e}");
            }
            peers.entries.insert(id, entry);
        }

        loop {
            let len = match socket.recv_from(&mut buf) {
                Ok((len, _)) => len,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) => {
                    log::warn!("recv failed: {e}");
                    break;
                }
            };
            let pkt = match Packet::decode(&buf[..len]) {
                Ok(p) => p,
                Err(e) => {
                    log.node_sim_event(now, id, &SimEvent::DecodeFailed { to: id, reason: e.to_string() });
                    continue;
                }
            };
            let sender = pkt.header.prev_hop;
            let (Some(theirs), Some(mine)) = (peers.entries.get(&sender), peers.entries.get(&id)) else {
                continue;
            };
            let d = distance(position_of(mine), position_of(theirs));
            if d > cfg.medium.range_m {
                continue;
            }
            link.attempts += 1;
            link.expected_losses += loss_probability(d, &cfg.medium);
            if !survives(d, &cfg.medium, &mut rng) {
                link.lost += 1;
                continue;
            }
            let (kind, source, seq) = (pkt.kind(), pkt.source(), pkt.seq());
            node.receive(now, pkt);
            let events = node.take_events();
            let fresh = events.iter().any(|e| matches!(e, NodeEvent::Received { fresh: true, .. }));
            let rec = Record::Receive(ReceiveRecord {
                receiver: id,
                source,
                seq,
                kind,
                t_ms: now,
                size: len,
                fresh,
            });
            tally.add(&rec);
            log.record(now, &rec);
            log_events(&mut log, &mut tally, now, id, events);
        }

        if let Some(rx) = &control.commands {
            while let Ok(verb) = rx.try_recv() {
                if let Some(s) = script.as_mut() {
                    s.release(id);
                }
                let rejected = node.command(now, verb).err();
                log::info!("node {id}: {verb:?} {}", if rejected.is_some() { "rejected" } else { "accepted" });
            }
        }
        if let Some(s) = script.as_mut() {
            if let Some(v) = s.due(now, id, node.mode()) {
                let verb = match v {
                    ScriptedVerb::Join => Verb::Join,
                    ScriptedVerb::Leave => Verb::Leave,
                };
                let _ = node.command(now, verb);
            }
        }
        node.poll(now);
        let events = node.take_events();
        log_events(&mut log, &mut tally, now, id, events);

        for out in node.take_outbox() {
            let bytes = out.packet.encode();
            let kind = out.packet.kind();
            let receivers: Vec<NodeId> = match out.link {
                Dest::Broadcast => peers.addrs.keys().copied().filter(|&p| p != id).collect(),
                Dest::Node(n) => vec![n],
            };
            let reach = (out.origin && kind == PacketKind::Normal)
                .then(|| peers.in_range(id, cfg.medium.range_m).len());
            let rec = Record::Send(SendRecord {
                node: id,
                source: out.packet.source(),
                seq: out.packet.seq(),
                kind,
                t_ms: now,
                size: bytes.len(),
                origin: out.origin,
                reach,
            });
            tally.add(&rec);
            log.record(now, &rec);
            for r in receivers {
                if let Some(to) = peers.addrs.get(&r) {
                    if let Err(e) = socket.send_to(&bytes, to) {
                        log::debug!("send to {r} failed: {e}");
                    }
                }
            }
        }
        thread::sleep(Duration::from_micros(500));
    }

    let end = start.elapsed().as_millis() as u64;
    log.node_sim_event(end, id, &SimEvent::Finished { total_tx: tally.total_tx });
    log.flush()?;
    Ok(UdpNodeSummary { id, addr, link, tally })
}

fn lane_offset(lane: Lane) -> f64 {
    match lane {
        Lane::Right => 0.0,
        Lane::Left => LANE_WIDTH_M,
    }
}

fn log_events(log: &mut EventLog, tally: &mut Tally, t: u64, id: NodeId, events: Vec<NodeEvent>) {
    for ev in events {
        if let NodeEvent::Latency { seq, rtt_ms } = ev {
            let rec = Record::Latency { t_ms: t, seq, rtt_ms };
            tally.add(&rec);
            log.record(t, &rec);
        }
        log.node_event(t, id, &ev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(secs: u64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            n_followers: 1,
            duration_s: secs,
            scripted: false,
            ..Default::default()
        };
        cfg.medium.loss_max = 0.0;
        cfg.timers.registry_read_ms = 10;
        cfg
    }

    #[test]
    fn follower_refuses_to_start_without_a_lead() {
        let dir = tempfile::tempdir().unwrap();
        let opts = UdpNodeOptions::new(NodeRole::Follow, dir.path().join("reg"), scenario(1));
        let err = run_node(opts, NodeControl::default()).unwrap_err();
        assert!(matches!(err, UdpError::Registry(RegistryError::NoLead)), "{err}");
    }

    #[test]
    fn registry_positions_map_back_to_lanes() {
        let e = RegistryEntry {
            node: NodeId::LEAD,
            host: "127.0.0.1".into(),
            port: 1,
            x: 42.0,
            y: lane_offset(Lane::Left),
            links: vec![],
        };
        assert_eq!(position_of(&e), Position { x: 42.0, lane: Lane::Left });
    }
}
