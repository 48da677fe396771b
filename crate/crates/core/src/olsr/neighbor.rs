//! Neighbor sensing from HELLO messages and MPR selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::net::NodeId;
use crate::packets::{HelloPayload, LinkStatus};

/// How an MPR is picked among the candidates of an uncovered two-hop neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    Random,
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OneHopEntry {
    pub status: LinkStatus,
    pub expires_at: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HelloError {
    #[error("HELLO from self ignored")]
    IgnoreSelf,
}

/// Nodes that picked this node as one of their MPRs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MprSelectorTable {
    selectors: BTreeSet<NodeId>,
}

impl MprSelectorTable {
    pub fn contains(&self, n: NodeId) -> bool {
        self.selectors.contains(&n)
    }

    pub fn is_empty(&self) -> bool {
        self.selectors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.selectors.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.selectors.iter().copied()
    }

    fn set(&mut self, n: NodeId, selected: bool) -> bool {
        if selected {
            self.selectors.insert(n)
        } else {
            self.selectors.remove(&n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    me: NodeId,
    hold_ms: u64,
    tie: TieBreak,
    one_hop: BTreeMap<NodeId, OneHopEntry>,
    two_hop: BTreeMap<NodeId, BTreeSet<NodeId>>,
    selectors: MprSelectorTable,
    table_seq: u32,
}

impl NeighborTable {
    pub fn new(me: NodeId, hold_ms: u64, tie: TieBreak) -> NeighborTable {
        NeighborTable {
            me,
            hold_ms,
            tie,
            one_hop: BTreeMap::new(),
            two_hop: BTreeMap::new(),
            selectors: MprSelectorTable::default(),
            table_seq: 0,
        }
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn table_seq(&self) -> u32 {
        self.table_seq
    }

    pub fn one_hop(&self) -> &BTreeMap<NodeId, OneHopEntry> {
        &self.one_hop
    }

    pub fn two_hop(&self) -> &BTreeMap<NodeId, BTreeSet<NodeId>> {
        &self.two_hop
    }

    pub fn selectors(&self) -> &MprSelectorTable {
        &self.selectors
    }

    pub fn status(&self, n: NodeId) -> Option<LinkStatus> {
        self.one_hop.get(&n).map(|e| e.status)
    }

    /// BI and MPR one-hop neighbors, in id order.
    pub fn symmetric_neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.one_hop
            .iter()
            .filter(|(_, e)| e.status.is_symmetric())
            .map(|(&n, _)| n)
    }

    pub fn mprs(&self) -> BTreeSet<NodeId> {
        self.one_hop
            .iter()
            .filter(|(_, e)| e.status == LinkStatus::Mpr)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn generate_hello(&self) -> HelloPayload {
        HelloPayload {
            neighbors: self.one_hop.iter().map(|(&n, e)| (n, e.status)).collect(),
        }
    }

    /// Applies one HELLO from `sender`. Returns whether the table changed.
    pub fn process_hello<R: Rng + ?Sized>(
        &mut self,
        sender: NodeId,
        hello: &HelloPayload,
        now_ms: u64,
        rng: &mut R,
    ) -> Result<bool, HelloError> {
        if sender == self.me {
            return Err(HelloError::IgnoreSelf);
        }
        let mut dirty = self.purge_expired(now_ms);
        let before = self.link_digest();
        let selectors_before = self.selectors.clone();

        // (1)
        let mut topo_changed = self.two_hop.remove(&sender).is_some();

        // (2)
        let listed = hello.status_of(self.me);
        let prev = self.one_hop.get(&sender).map(|e| e.status);
        let status = match (listed, prev) {
            (None, _) => LinkStatus::Uni,
            (Some(_), Some(LinkStatus::Mpr)) => LinkStatus::Mpr,
            (Some(_), _) => LinkStatus::Bi,
        };
        self.one_hop.insert(
            sender,
            OneHopEntry {
                status,
                expires_at: now_ms + self.hold_ms,
            },
        );
        topo_changed |= prev.map(LinkStatus::is_symmetric) != Some(status.is_symmetric());
        self.selectors
            .set(sender, listed == Some(LinkStatus::Mpr));

        // (3)
        let lists_sym = |m: NodeId| hello.status_of(m).is_some_and(LinkStatus::is_symmetric);
        let mut emptied = Vec::new();
        for (&m, through) in self.two_hop.iter_mut() {
            if through.contains(&sender) && !(status.is_symmetric() && lists_sym(m)) {
                through.remove(&sender);
                topo_changed = true;
                if through.is_empty() {
                    emptied.push(m);
                }
            }
        }
        for m in emptied {
            self.two_hop.remove(&m);
        }

        // (4)
        if status.is_symmetric() {
            for &(n, st) in &hello.neighbors {
                if n == self.me || !st.is_symmetric() || self.one_hop.contains_key(&n) {
                    continue;
                }
                topo_changed |= self.two_hop.entry(n).or_default().insert(sender);
            }
        }

        // (5)
        if topo_changed || dirty {
            self.reselect(rng);
        }
        dirty |= topo_changed;
        if self.link_digest() != before || self.selectors != selectors_before {
            self.bump();
            dirty = true;
        }
        Ok(dirty || prev.is_none())
    }

    /// Drops entries whose holding time has passed. Returns whether anything was removed;
    /// the MPR set is recomputed when it was.
    pub fn expire<R: Rng + ?Sized>(&mut self, now_ms: u64, rng: &mut R) -> bool {
        let before = self.link_digest();
        let selectors_before = self.selectors.clone();
        if !self.purge_expired(now_ms) {
            return false;
        }
        self.reselect(rng);
        if self.link_digest() != before || self.selectors != selectors_before {
            self.bump();
        }
        true
    }

    fn purge_expired(&mut self, now_ms: u64) -> bool {
        let gone: Vec<NodeId> = self
            .one_hop
            .iter()
            .filter(|(_, e)| e.expires_at <= now_ms)
            .map(|(&n, _)| n)
            .collect();
        for n in &gone {
            self.one_hop.remove(n);
            self.selectors.set(*n, false);
            self.two_hop.retain(|_, through| {
                through.remove(n);
                !through.is_empty()
            });
        }
        !gone.is_empty()
    }

    fn reselect<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mprs = select_mprs(&self.two_hop, self.tie, rng);
        for (n, e) in self.one_hop.iter_mut() {
            e.status = match e.status {
                LinkStatus::Uni => LinkStatus::Uni,
                _ if mprs.contains(n) => LinkStatus::Mpr,
                _ => LinkStatus::Bi,
            };
        }
    }

    fn link_digest(&self) -> Vec<(NodeId, LinkStatus)> {
        self.one_hop.iter().map(|(&n, e)| (n, e.status)).collect()
    }

    fn bump(&mut self) {
        self.table_seq = self.table_seq.wrapping_add(1);
    }
}

/// Greedy cover of the two-hop set: neighbors reachable through the fewest relays
/// are handled first, ties by id; each uncovered one picks a relay among its
/// access-through set.
pub fn select_mprs<R: Rng + ?Sized>(
    two_hop: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    tie: TieBreak,
    rng: &mut R,
) -> BTreeSet<NodeId> {
    let mut order: Vec<(&NodeId, &BTreeSet<NodeId>)> = two_hop.iter().collect();
    order.sort_by_key(|(n, through)| (through.len(), **n));
    let mut chosen = BTreeSet::new();
    for (_, through) in order {
        if through.iter().any(|t| chosen.contains(t)) {
            continue;
        }
        let pick = match tie {
            TieBreak::LowestId => through.iter().next().copied(),
            TieBreak::Random => through.iter().copied().choose(rng),
        };
        if let Some(p) = pick {
            chosen.insert(p);
        }
    }
    chosen
}

impl fmt::Display for NeighborTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Node {} neighbor table (seq {})", self.me, self.table_seq)?;
        writeln!(f, "One-hop Neighbors | Link Status")?;
        for (n, e) in &self.one_hop {
            writeln!(f, "{n:<17} | {}", e.status)?;
        }
        writeln!(f, "Two-hop Neighbors | Access Through")?;
        for (n, through) in &self.two_hop {
            let list: Vec<String> = through.iter().map(|t| t.to_string()).collect();
            writeln!(f, "{n:<17} | {}", list.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    fn hello(entries: &[(u16, LinkStatus)]) -> HelloPayload {
        HelloPayload {
            neighbors: entries.iter().map(|&(n, s)| (id(n), s)).collect(),
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn table(me: u16) -> NeighborTable {
        NeighborTable::new(id(me), 100, TieBreak::LowestId)
    }

    use LinkStatus::*;

    #[test]
    fn unknown_sender_without_me_is_uni() {
        let mut t = table(1);
        assert!(t.process_hello(id(2), &hello(&[]), 0, &mut rng()).unwrap());
        assert_eq!(t.status(id(2)), Some(Uni));
    }

    #[test]
    fn sender_listing_me_becomes_bi() {
        let mut t = table(1);
        t.process_hello(id(2), &hello(&[]), 0, &mut rng()).unwrap();
        t.process_hello(id(2), &hello(&[(1, Uni)]), 5, &mut rng()).unwrap();
        assert_eq!(t.status(id(2)), Some(Bi));
    }

    #[test]
    fn bi_sender_adds_two_hop() {
        let mut t = table(1);
        t.process_hello(id(2), &hello(&[(1, Uni)]), 0, &mut rng()).unwrap();
        t.process_hello(id(2), &hello(&[(1, Bi), (7, Bi)]), 1, &mut rng()).unwrap();
        assert_eq!(t.two_hop()[&id(7)], BTreeSet::from([id(2)]));
        assert_eq!(t.status(id(2)), Some(Mpr));
    }

    #[test]
    fn self_hello_rejected() {
        let mut t = table(1);
        assert_eq!(
            t.process_hello(id(1), &hello(&[]), 0, &mut rng()),
            Err(HelloError::IgnoreSelf)
        );
    }

    #[test]
    fn selection_matches_table_example() {
        let two_hop = BTreeMap::from([
            (id(1), BTreeSet::from([id(3)])),
            (id(2), BTreeSet::from([id(3)])),
            (id(10), BTreeSet::from([id(5)])),
        ]);
        assert_eq!(
            select_mprs(&two_hop, TieBreak::Random, &mut rng()),
            BTreeSet::from([id(3), id(5)])
        );
        assert!(select_mprs(&BTreeMap::new(), TieBreak::Random, &mut rng()).is_empty());
    }

    #[test]
    fn fewest_access_first() {
        // A=20 reachable via {x=3, y=4}, B=21 only via x.
        let two_hop = BTreeMap::from([
            (id(20), BTreeSet::from([id(3), id(4)])),
            (id(21), BTreeSet::from([id(3)])),
        ]);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(
                select_mprs(&two_hop, TieBreak::Random, &mut r),
                BTreeSet::from([id(3)])
            );
        }
    }

    /// Builds the state of node 4 in the exemplary neighbor table.
    fn node4() -> NeighborTable {
        let mut t = table(4);
        let mut r = rng();
        for n in [3, 5, 6, 7, 8, 9] {
            t.process_hello(id(n), &hello(&[]), 0, &mut r).unwrap();
        }
        t.process_hello(id(3), &hello(&[(4, Uni), (1, Bi), (2, Bi)]), 1, &mut r)
            .unwrap();
        t.process_hello(id(5), &hello(&[(4, Uni), (10, Bi)]), 1, &mut r)
            .unwrap();
        for n in [6, 7, 8, 9] {
            t.process_hello(id(n), &hello(&[(4, Uni)]), 1, &mut r).unwrap();
        }
        t
    }

    #[test]
    fn hello_reflects_exemplary_table() {
        let t = node4();
        assert_eq!(
            t.generate_hello(),
            hello(&[(3, Mpr), (5, Mpr), (6, Bi), (7, Bi), (8, Bi), (9, Bi)])
        );
        assert!(table(4).generate_hello().neighbors.is_empty());
        let dump = t.to_string();
        assert!(dump.contains("One-hop Neighbors | Link Status"));
        assert!(dump.contains("10                | 5"));
        assert!(dump.contains("1                 | 3"));
    }

    #[test]
    fn mpr_change_shows_in_next_hello() {
        let mut t = node4();
        let mut r = rng();
        // 5 stops hearing 10, so 5 is no longer needed as a relay.
        t.process_hello(id(5), &hello(&[(4, Mpr)]), 2, &mut r).unwrap();
        assert_eq!(t.status(id(5)), Some(Bi));
        assert!(!t.two_hop().contains_key(&id(10)));
        assert_eq!(t.generate_hello().status_of(id(5)), Some(Bi));
    }

    #[test]
    fn table_seq_tracks_changes() {
        let mut t = node4();
        let mut r = rng();
        let s = t.table_seq();
        t.process_hello(id(6), &hello(&[(4, Bi)]), 2, &mut r).unwrap();
        assert_eq!(t.table_seq(), s, "no change, no bump");
        t.process_hello(id(5), &hello(&[(4, Mpr)]), 3, &mut r).unwrap();
        assert!(t.table_seq() > s);
    }

    #[test]
    fn selector_table_follows_latest_hello() {
        let mut t = table(1);
        let mut r = rng();
        t.process_hello(id(2), &hello(&[(1, Mpr)]), 0, &mut r).unwrap();
        assert!(t.selectors().contains(id(2)));
        t.process_hello(id(2), &hello(&[(1, Bi)]), 1, &mut r).unwrap();
        assert!(!t.selectors().contains(id(2)));
    }

    #[test]
    fn expiry_purges_neighbors_and_relays() {
        let mut t = node4();
        let mut r = rng();
        assert!(t.expire(101, &mut r));
        assert!(t.one_hop().is_empty());
        assert!(t.two_hop().is_empty());
        assert!(t.mprs().is_empty());
    }

    #[test]
    fn one_and_two_hop_stay_disjoint() {
        let mut t = node4();
        let mut r = rng();
        // 10 comes into direct range.
        t.process_hello(id(10), &hello(&[(4, Uni)]), 2, &mut r).unwrap();
        assert!(t.one_hop().contains_key(&id(10)));
        assert!(!t.two_hop().contains_key(&id(10)));
    }
}
