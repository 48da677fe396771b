//! Protocol runs on abstract graphs: lossless links, unit per-hop delay, FIFO
//! delivery. Drives the real HELLO/TC/forwarding code without vehicles or a
//! radio model, plus the brute-force oracles the protocol is checked against.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::net::NodeId;
use crate::olsr::{
    forward_decision, generate_tc, DupCache, ForwardDecision, NeighborTable, TieBreak,
    TopologyTable,
};
use crate::packets::{Dest, Packet, Payload, TcPayload};
use crate::rba::{rba_on_receive, relay_copy, CacheTable, RbaDecision};

/// Holding time long enough that nothing expires during a graph run.
const FOREVER_MS: u64 = u64::MAX / 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Graph {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

fn nid(i: usize) -> NodeId {
    NodeId::new(i as u16).expect("graph node ids start at 1")
}

impl Graph {
    /// Nodes `1..=n` with the given undirected edges (1-based).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Graph {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
            (1..=n).map(|i| (nid(i), BTreeSet::new())).collect();
        for &(a, b) in edges {
            if a != b {
                adj.get_mut(&nid(a)).unwrap().insert(nid(b));
                adj.get_mut(&nid(b)).unwrap().insert(nid(a));
            }
        }
        Graph { adj }
    }

    /// Unit-disk graph over points dropped uniformly in a `side` x `side` square.
    pub fn random_geometric<R: Rng + ?Sized>(n: usize, side: f64, range: f64, rng: &mut R) -> Graph {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side))
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1) <= range {
                    edges.push((i + 1, j + 1));
                }
            }
        }
        Graph::from_edges(n, &edges)
    }

    /// Erdős-Rényi graph, resampled until connected.
    pub fn random_connected<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
        loop {
            let mut edges = Vec::new();
            for i in 1..=n {
                for j in i + 1..=n {
                    if rng.gen_bool(p) {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges);
            if g.is_connected() {
                return g;
            }
        }
    }

    /// Every connected labelled graph on `n` nodes.
    pub fn all_connected(n: usize) -> Vec<Graph> {
        let pairs: Vec<(usize, usize)> = (1..=n)
            .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
            .collect();
        let mut out = Vec::new();
        for mask in 0u64..(1u64 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            let g = Graph::from_edges(n, &edges);
            if g.is_connected() {
                out.push(g);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn neighbors(&self, v: NodeId) -> &BTreeSet<NodeId> {
        &self.adj[&v]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn adjacency(&self) -> &BTreeMap<NodeId, BTreeSet<NodeId>> {
        &self.adj
    }

    pub fn is_connected(&self) -> bool {
        match self.adj.keys().next() {
            None => true,
            Some(&s) => reachable(&self.adj, s).len() == self.adj.len(),
        }
    }

    /// Nodes exactly two hops from `v`.
    pub fn strict_two_hop(&self, v: NodeId) -> BTreeSet<NodeId> {
        let one = &self.adj[&v];
        one.iter()
            .flat_map(|u| self.adj[u].iter().copied())
            .filter(|w| *w != v && !one.contains(w))
            .collect()
    }
}

/// Nodes reachable from `from`, including itself.
pub fn reachable(adj: &BTreeMap<NodeId, BTreeSet<NodeId>>, from: NodeId) -> BTreeSet<NodeId> {
    bfs_distances(adj, from).into_keys().collect()
}

/// Hop counts from `from`, which maps to 0.
pub fn bfs_distances(
    adj: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    from: NodeId,
) -> BTreeMap<NodeId, u32> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        let d = dist[&u];
        for &v in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(&v) {
                dist.insert(v, d + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Whether every target is adjacent to some chosen relay.
pub fn is_cover(
    chosen: &BTreeSet<NodeId>,
    targets: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> bool {
    targets.values().all(|via| via.iter().any(|r| chosen.contains(r)))
}

/// Smallest relay set covering all targets, by exhaustive search.
pub fn min_cover(targets: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> Option<BTreeSet<NodeId>> {
    let cands: Vec<NodeId> = targets
        .values()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    assert!(cands.len() < 24, "too many candidates for brute force");
    let mut best: Option<BTreeSet<NodeId>> = None;
    for mask in 0u32..(1 << cands.len()) {
        if best.as_ref().is_some_and(|b| mask.count_ones() as usize >= b.len()) {
            continue;
        }
        let set: BTreeSet<NodeId> = cands
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &c)| c)
            .collect();
        if is_cover(&set, targets) {
            best = Some(set);
        }
    }
    best
}

/// One HELLO from `from`, applied at every graph neighbor.
pub fn deliver_hello<R: Rng + ?Sized>(
    g: &Graph,
    tables: &mut BTreeMap<NodeId, NeighborTable>,
    from: NodeId,
    now_ms: u64,
    rng: &mut R,
) -> bool {
    let hello = tables[&from].generate_hello();
    let mut changed = false;
    for &to in g.neighbors(from) {
        changed |= tables
            .get_mut(&to)
            .unwrap()
            .process_hello(from, &hello, now_ms, rng)
            .expect("no self hellos on a graph");
    }
    changed
}

pub fn empty_tables(g: &Graph, tie: TieBreak) -> BTreeMap<NodeId, NeighborTable> {
    g.nodes()
        .map(|v| (v, NeighborTable::new(v, FOREVER_MS, tie)))
        .collect()
}

/// Synchronous HELLO rounds until a full round changes nothing.
pub fn converge_hello<R: Rng + ?Sized>(
    g: &Graph,
    tie: TieBreak,
    rng: &mut R,
) -> BTreeMap<NodeId, NeighborTable> {
    let mut tables = empty_tables(g, tie);
    for round in 0..64u64 {
        let mut changed = false;
        for v in g.nodes().collect::<Vec<_>>() {
            changed |= deliver_hello(g, &mut tables, v, round, rng);
        }
        if !changed && round > 0 {
            break;
        }
    }
    tables
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dissemination {
    /// Nodes (other than the source) that got the packet.
    pub delivered: BTreeSet<NodeId>,
    /// Point-to-point sends, with the origination counted once.
    pub transmissions: usize,
}

impl Dissemination {
    pub fn reached_all(&self, g: &Graph) -> bool {
        self.delivered.len() + 1 == g.len()
    }
}

/// Source broadcasts once, MPRs relay using `forward_decision`. `on_fresh` sees
/// each node's first copy.
pub fn disseminate_mpr(
    g: &Graph,
    tables: &BTreeMap<NodeId, NeighborTable>,
    pkt: Packet,
    mut on_fresh: impl FnMut(NodeId, &Packet),
) -> Dissemination {
    let source = pkt.source();
    let mut caches: BTreeMap<NodeId, DupCache> =
        g.nodes().map(|v| (v, DupCache::new())).collect();
    let mut out = Dissemination {
        transmissions: 1,
        ..Dissemination::default()
    };
    let mut q: VecDeque<(NodeId, Packet)> =
        g.neighbors(source).iter().map(|&v| (v, pkt.clone())).collect();
    while let Some((at, p)) = q.pop_front() {
        let nb = &tables[&at];
        let d = forward_decision(at, nb.selectors(), caches.get_mut(&at).unwrap(), &p);
        if d.is_fresh() {
            out.delivered.insert(at);
            on_fresh(at, &p);
        }
        if let ForwardDecision::Retransmit { .. } = d {
            let relay = relay_copy(&p, at);
            for n in nb.symmetric_neighbors() {
                if n == p.header.prev_hop || n == p.source() {
                    continue;
                }
                out.transmissions += 1;
                if g.neighbors(at).contains(&n) {
                    q.push_back((n, relay.clone()));
                }
            }
        }
    }
    out
}

/// Source broadcasts once, every node relays with the reliable-broadcast rule.
pub fn disseminate_rba<R: Rng + ?Sized>(g: &Graph, pkt: Packet, rng: &mut R) -> Dissemination {
    let source = pkt.source();
    let mut caches: BTreeMap<NodeId, CacheTable> =
        g.nodes().map(|v| (v, CacheTable::new())).collect();
    let mut out = Dissemination {
        transmissions: 1,
        ..Dissemination::default()
    };
    let mut q: VecDeque<(NodeId, Packet)> =
        g.neighbors(source).iter().map(|&v| (v, pkt.clone())).collect();
    while let Some((at, p)) = q.pop_front() {
        let d = rba_on_receive(at, caches.get_mut(&at).unwrap(), &p, rng);
        if d == RbaDecision::ForwardNew {
            out.delivered.insert(at);
        }
        if d.forwards() {
            let relay = relay_copy(&p, at);
            for &n in g.neighbors(at) {
                if n == p.header.prev_hop {
                    continue;
                }
                out.transmissions += 1;
                q.push_back((n, relay.clone()));
            }
        }
    }
    out
}

/// Every node with selectors floods one TC; each fresh copy lands in the
/// receiver's topology table.
pub fn converge_topology(
    g: &Graph,
    tables: &BTreeMap<NodeId, NeighborTable>,
) -> BTreeMap<NodeId, TopologyTable> {
    let mut topo: BTreeMap<NodeId, TopologyTable> =
        g.nodes().map(|v| (v, TopologyTable::new(FOREVER_MS))).collect();
    for (&v, nb) in tables {
        let Some(tc) = generate_tc(nb) else { continue };
        let pkt = Packet::new(v, 1, Dest::Broadcast, Payload::Tc(tc));
        disseminate_mpr(g, tables, pkt, |at, p| {
            if let Payload::Tc(tc) = &p.payload {
                topo.get_mut(&at).unwrap().process_tc(p.source(), tc, 0);
            }
        });
    }
    topo
}

/// Ground-truth relay graph: undirected edges between every node and its selectors.
pub fn selector_graph(tables: &BTreeMap<NodeId, NeighborTable>) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&o, nb) in tables {
        for s in nb.selectors().iter() {
            adj.entry(o).or_default().insert(s);
            adj.entry(s).or_default().insert(o);
        }
    }
    adj
}

pub fn empty_tc(source: NodeId, seq: u32) -> Packet {
    Packet::new(source, seq, Dest::Broadcast, Payload::Tc(TcPayload::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn connected_graph_counts() {
        // OEIS A001187: 1, 1, 4, 38, 728
        assert_eq!(Graph::all_connected(2).len(), 1);
        assert_eq!(Graph::all_connected(3).len(), 4);
        assert_eq!(Graph::all_connected(4).len(), 38);
        assert_eq!(Graph::all_connected(5).len(), 728);
    }

    #[test]
    fn chain_converges_to_inner_relays() {
        let g = Graph::from_edges(4, &[(1, 2), (2, 3), (3, 4)]);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let t = converge_hello(&g, TieBreak::LowestId, &mut r);
        assert_eq!(t[&nid(1)].mprs(), BTreeSet::from([nid(2)]));
        assert_eq!(t[&nid(2)].mprs(), BTreeSet::from([nid(3)]));
        assert!(t[&nid(2)].selectors().contains(nid(1)));
        let d = disseminate_mpr(&g, &t, empty_tc(nid(1), 1), |_, _| {});
        assert!(d.reached_all(&g));
        // 1 broadcasts, 2 relays to 3, 3 relays to 4.
        assert_eq!(d.transmissions, 3);
    }

    #[test]
    fn flooding_reaches_all() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::random_connected(8, 0.4, &mut r);
        let d = disseminate_rba(&g, empty_tc(nid(3), 1), &mut r);
        assert!(d.reached_all(&g));
    }

    #[test]
    fn brute_force_cover() {
        let t = BTreeMap::from([
            (nid(20), BTreeSet::from([nid(3), nid(4)])),
            (nid(21), BTreeSet::from([nid(3)])),
        ]);
        assert_eq!(min_cover(&t), Some(BTreeSet::from([nid(3)])));
        assert!(is_cover(&BTreeSet::from([nid(3)]), &t));
        assert!(!is_cover(&BTreeSet::from([nid(4)]), &t));
    }
}
