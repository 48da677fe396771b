use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::neighbor::NeighborTable;
use super::topology::TopologyTable;
use crate::net::NodeId;
use crate::packets::Packet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub distance: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoutingTable {
    routes: BTreeMap<NodeId, RouteEntry>,
}

impl RoutingTable {
    pub fn get(&self, dest: NodeId) -> Option<RouteEntry> {
        self.routes.get(&dest).copied()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.routes.values()
    }
}

/// Undirected relay graph: originator to selector edges from live TC entries,
/// not involving `me`.
pub fn relay_edges(
    me: NodeId,
    topo: &TopologyTable,
    now_ms: u64,
) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (o, e) in topo.live(now_ms) {
        if o == me {
            continue;
        }
        for &s in &e.selectors {
            if s == me || s == o {
                continue;
            }
            adj.entry(o).or_default().insert(s);
            adj.entry(s).or_default().insert(o);
        }
    }
    adj
}

/// Breadth-first search seeded with the symmetric one-hop neighbors, expanding
/// over the relay graph.
pub fn compute_routes(nb: &NeighborTable, topo: &TopologyTable, now_ms: u64) -> RoutingTable {
    let me = nb.me();
    let adj = relay_edges(me, topo, now_ms);
    let mut routes = BTreeMap::new();
    let mut queue = VecDeque::new();
    for n in nb.symmetric_neighbors() {
        routes.insert(
            n,
            RouteEntry {
                dest: n,
                next_hop: n,
                distance: 1,
            },
        );
        queue.push_back(n);
    }
    while let Some(u) = queue.pop_front() {
        let via = routes[&u];
        let Some(next) = adj.get(&u) else { continue };
        for &v in next {
            if v == me || routes.contains_key(&v) {
                continue;
            }
            routes.insert(
                v,
                RouteEntry {
                    dest: v,
                    next_hop: via.next_hop,
                    distance: via.distance + 1,
                },
            );
            queue.push_back(v);
        }
    }
    RoutingTable { routes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnicastDecision {
    DeliverLocal,
    ForwardTo(NodeId),
    NoRoute,
}

/// Next step for a destination-bearing packet. On `ForwardTo` the packet's
/// previous hop is rewritten to `me`.
pub fn route_unicast(me: NodeId, routes: &RoutingTable, pkt: &mut Packet) -> UnicastDecision {
    let Some(dest) = pkt.header.dest.node() else {
        return UnicastDecision::NoRoute;
    };
    if dest == me {
        return UnicastDecision::DeliverLocal;
    }
    match routes.get(dest) {
        Some(r) => {
            pkt.header.prev_hop = me;
            UnicastDecision::ForwardTo(r.next_hop)
        }
        None => UnicastDecision::NoRoute,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::olsr::neighbor::TieBreak;
    use crate::packets::{Dest, HelloPayload, LinkStatus, Payload, TcPayload};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    /// Node 1 on the chain 1-2-3-4 after 2 and 3 advertised their selectors.
    fn chain_at_1() -> (NeighborTable, TopologyTable) {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut nb = NeighborTable::new(id(1), 100, TieBreak::LowestId);
        nb.process_hello(
            id(2),
            &HelloPayload {
                neighbors: vec![(id(1), LinkStatus::Bi), (id(3), LinkStatus::Mpr)],
            },
            0,
            &mut r,
        )
        .unwrap();
        let mut topo = TopologyTable::new(90);
        topo.process_tc(id(2), &TcPayload { tc_seq: 1, selectors: vec![id(1), id(3)] }, 0);
        topo.process_tc(id(3), &TcPayload { tc_seq: 1, selectors: vec![id(2), id(4)] }, 0);
        (nb, topo)
    }

    #[test]
    fn chain_routes() {
        let (nb, topo) = chain_at_1();
        let rt = compute_routes(&nb, &topo, 10);
        assert_eq!(
            rt.get(id(2)),
            Some(RouteEntry { dest: id(2), next_hop: id(2), distance: 1 })
        );
        assert_eq!(
            rt.get(id(4)),
            Some(RouteEntry { dest: id(4), next_hop: id(2), distance: 3 })
        );
        assert_eq!(rt.get(id(9)), None);
    }

    #[test]
    fn expired_topology_is_ignored() {
        let (nb, topo) = chain_at_1();
        let rt = compute_routes(&nb, &topo, 95);
        assert_eq!(rt.len(), 1);
    }

    #[test]
    fn unicast_decisions() {
        let (nb, topo) = chain_at_1();
        let rt = compute_routes(&nb, &topo, 10);
        let mut p = Packet::new(id(4), 1, Dest::Node(id(1)), Payload::Leave);
        assert_eq!(route_unicast(id(1), &rt, &mut p), UnicastDecision::DeliverLocal);
        let mut p = Packet::new(id(1), 1, Dest::Node(id(4)), Payload::Leave);
        assert_eq!(route_unicast(id(1), &rt, &mut p), UnicastDecision::ForwardTo(id(2)));
        let mut p = Packet::new(id(1), 1, Dest::Node(id(8)), Payload::Leave);
        assert_eq!(route_unicast(id(1), &rt, &mut p), UnicastDecision::NoRoute);
    }
}
