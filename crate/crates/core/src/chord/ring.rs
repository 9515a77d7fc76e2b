use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::id::{in_half_open, in_open, space_id, IdSpace, RingId};
use super::ChordError;

/// First node clockwise at or after `key` in a sorted id list.
pub fn responsible_node(ids: &[RingId], key: RingId) -> Result<RingId, ChordError> {
    if ids.is_empty() {
        return Err(ChordError::EmptyRing);
    }
    Ok(ids[owner_index(ids, key)])
}

fn owner_index(ids: &[RingId], key: RingId) -> usize {
    let idx = ids.partition_point(|id| *id < key);
    if idx == ids.len() {
        0
    } else {
        idx
    }
}

/// The responsible node for `key` followed by its `r` clockwise successors.
pub fn replica_set(ids: &[RingId], key: RingId, r: usize) -> Result<Vec<RingId>, ChordError> {
    if ids.is_empty() {
        return Err(ChordError::EmptyRing);
    }
    if r + 1 > ids.len() {
        return Err(ChordError::NotEnoughNodes {
            needed: r + 1,
            available: ids.len(),
        });
    }
    let start = owner_index(ids, key);
    Ok((0..=r).map(|k| ids[(start + k) % ids.len()]).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoutingTable {
    pub successors: Vec<RingId>,
    pub predecessor: Option<RingId>,
    /// `fingers[i]` is the first node at or after `self + 2^i`.
    pub fingers: Vec<RingId>,
}

#[derive(Clone, Debug)]
pub struct OverlayNode {
    pub id: RingId,
    pub address: String,
    pub routing: RoutingTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub owner: RingId,
    /// Nodes queried on the way, excluding the origin.
    pub hops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StabilizeStats {
    pub messages: u64,
    /// Messages charged to the node whose table needed the most repair.
    pub max_node_messages: u64,
    pub nodes_changed: usize,
}

#[derive(Clone, Debug)]
pub struct ChordRing {
    space: IdSpace,
    suc: usize,
    nodes: BTreeMap<RingId, OverlayNode>,
    ids: Vec<RingId>,
    stable: bool,
}

impl ChordRing {
    /// An empty ring whose nodes keep up to `suc` successors.
    pub fn new(space: IdSpace, suc: usize) -> ChordRing {
        ChordRing {
            space,
            suc: suc.max(1),
            nodes: BTreeMap::new(),
            ids: Vec::new(),
            stable: true,
        }
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn suc(&self) -> usize {
        self.suc
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_stable(&self) -> bool {
        self.stable
    }

    /// Sorted node ids.
    pub fn ids(&self) -> &[RingId] {
        &self.ids
    }

    pub fn contains(&self, id: RingId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: RingId) -> Option<&OverlayNode> {
        self.nodes.get(&id)
    }

    pub fn id_for_address(&self, address: &str) -> RingId {
        space_id(self.space, address.as_bytes())
    }

    pub fn responsible_node(&self, key: RingId) -> Result<RingId, ChordError> {
        responsible_node(&self.ids, key)
    }

    pub fn replica_set(&self, key: RingId, r: usize) -> Result<Vec<RingId>, ChordError> {
        replica_set(&self.ids, key, r)
    }

    /// Adds a node whose id is the hash of its address.
    pub fn join(&mut self, address: &str) -> Result<RingId, ChordError> {
        let id = self.id_for_address(address);
        self.join_with_id(address, id)?;
        Ok(id)
    }

    /// Adds a node with an explicit id. Tables go stale until the next
    /// [`stabilize`](Self::stabilize).
    pub fn join_with_id(&mut self, address: &str, id: RingId) -> Result<(), ChordError> {
        if self.nodes.contains_key(&id) {
            return Err(ChordError::IdCollision(id));
        }
        self.nodes.insert(
            id,
            OverlayNode {
                id,
                address: address.to_string(),
                routing: RoutingTable::default(),
            },
        );
        let pos = self.ids.partition_point(|x| *x < id);
        self.ids.insert(pos, id);
        self.stable = false;
        Ok(())
    }

    pub fn leave(&mut self, id: RingId) -> Result<OverlayNode, ChordError> {
        let node = self.nodes.remove(&id).ok_or(ChordError::UnknownNode(id))?;
        let pos = self.ids.binary_search(&id).expect("ids mirrors nodes");
        self.ids.remove(pos);
        self.stable = false;
        Ok(node)
    }

    /// The table a node should hold given the current membership.
    pub fn ground_truth(&self, id: RingId) -> Result<RoutingTable, ChordError> {
        let pos = self
            .ids
            .binary_search(&id)
            .map_err(|_| ChordError::UnknownNode(id))?;
        let n = self.ids.len();
        let successors = if n == 1 {
            vec![id]
        } else {
            (1..=self.suc.min(n - 1))
                .map(|k| self.ids[(pos + k) % n])
                .collect()
        };
        let predecessor = Some(self.ids[(pos + n - 1) % n]);
        let fingers = (0..self.space.bits())
            .map(|i| self.ids[owner_index(&self.ids, self.space.offset(id, i))])
            .collect();
        Ok(RoutingTable {
            successors,
            predecessor,
            fingers,
        })
    }

    /// Rebuilds every routing table to match the membership.
    ///
    /// Message charges per node: one per changed successor-list slot, one
    /// for a changed predecessor, and for each changed finger that points to
    /// a node different from the finger below it, a lookup of the finger's
    /// start (hops + 1). Fingers that repeat their lower neighbor are filled
    /// in without a query.
    pub fn stabilize(&mut self) -> StabilizeStats {
        let mut refresh: Vec<(RingId, Vec<u32>, u64)> = Vec::new();
        let ids = self.ids.clone();
        for &id in &ids {
            let truth = self.ground_truth(id).expect("member");
            let node = self.nodes.get_mut(&id).expect("member");
            if node.routing == truth {
                continue;
            }
            let old = &node.routing;
            let mut cheap = 0u64;
            for (k, s) in truth.successors.iter().enumerate() {
                if old.successors.get(k) != Some(s) {
                    cheap += 1;
                }
            }
            if old.predecessor != truth.predecessor {
                cheap += 1;
            }
            let mut queried = Vec::new();
            for (i, f) in truth.fingers.iter().enumerate() {
                let changed = old.fingers.get(i) != Some(f);
                let reused = i > 0 && truth.fingers[i - 1] == *f;
                if changed && !reused {
                    queried.push(i as u32);
                }
            }
            node.routing = truth;
            refresh.push((id, queried, cheap));
        }
        self.stable = true;

        let mut stats = StabilizeStats {
            nodes_changed: refresh.len(),
            ..Default::default()
        };
        for (id, queried, cheap) in refresh {
            let mut charged = cheap;
            for i in queried {
                let start = self.space.offset(id, i);
                let hops = self.lookup(id, start).expect("stable ring").hops;
                charged += hops + 1;
            }
            stats.messages += charged;
            stats.max_node_messages = stats.max_node_messages.max(charged);
        }
        stats
    }

    /// Iterative lookup from `origin`. Each step asks the current node for
    /// the closest predecessor of `key` it knows; the walk ends when the
    /// key falls between the current node and its successor.
    pub fn lookup(&self, origin: RingId, key: RingId) -> Result<Lookup, ChordError> {
        if !self.stable {
            return Err(ChordError::NotStabilized);
        }
        let start = self
            .nodes
            .get(&origin)
            .ok_or(ChordError::UnknownNode(origin))?;
        if let Some(pred) = start.routing.predecessor {
            if in_half_open(key, pred, origin) {
                return Ok(Lookup {
                    owner: origin,
                    hops: 0,
                });
            }
        }
        let mut current = start;
        let mut hops = 0;
        loop {
            let succ = current.routing.successors[0];
            if in_half_open(key, current.id, succ) {
                return Ok(Lookup { owner: succ, hops });
            }
            let next = closest_preceding(current, key);
            if next == current.id {
                return Ok(Lookup { owner: succ, hops });
            }
            current = &self.nodes[&next];
            hops += 1;
        }
    }

    /// Deterministic text dump of every node's table.
    pub fn snapshot(&self) -> String {
        let hex = |id: RingId| id.to_hex(self.space);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ring m={} suc={} nodes={} stable={}",
            self.space.bits(),
            self.suc,
            self.ids.len(),
            self.stable
        );
        for node in self.nodes.values() {
            let t = &node.routing;
            let succ: Vec<String> = t.successors.iter().map(|s| hex(*s)).collect();
            let pred = t.predecessor.map(hex).unwrap_or_else(|| "-".into());
            let _ = write!(
                out,
                "{} addr={} pred={} succ=[{}] fingers=[",
                hex(node.id),
                node.address,
                pred,
                succ.join(",")
            );
            let mut i = 0;
            let mut first = true;
            while i < t.fingers.len() {
                let mut j = i;
                while j + 1 < t.fingers.len() && t.fingers[j + 1] == t.fingers[i] {
                    j += 1;
                }
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{i}-{j}:{}", hex(t.fingers[i]));
                i = j + 1;
            }
            out.push_str("]\n");
        }
        out
    }
}

fn closest_preceding(node: &OverlayNode, key: RingId) -> RingId {
    let mut best = node.id;
    for f in node.routing.fingers.iter().rev() {
        if in_open(*f, node.id, key) {
            best = *f;
            break;
        }
    }
    for s in &node.routing.successors {
        if in_open(*s, best, key) {
            best = *s;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(v: u128) -> RingId {
        RingId::from_u128(v)
    }

    fn four_node_ring() -> ChordRing {
        let mut ring = ChordRing::new(IdSpace::new(8).unwrap(), 2);
        for v in [20, 70, 120, 250] {
            ring.join_with_id(&format!("n{v}"), id(v)).unwrap();
        }
        ring.stabilize();
        ring
    }

    #[test]
    fn four_node_ownership() {
        let ring = four_node_ring();
        assert_eq!(ring.responsible_node(id(55)).unwrap(), id(70));
        assert_eq!(
            ring.replica_set(id(55), 2).unwrap(),
            vec![id(70), id(120), id(250)]
        );
        assert_eq!(ring.replica_set(id(55), 0).unwrap(), vec![id(70)]);
        assert_eq!(ring.responsible_node(id(70)).unwrap(), id(70));
        assert_eq!(ring.responsible_node(id(251)).unwrap(), id(20));
    }

    #[test]
    fn four_node_leave() {
        let mut ring = four_node_ring();
        ring.leave(id(70)).unwrap();
        assert!(matches!(
            ring.lookup(id(20), id(55)),
            Err(ChordError::NotStabilized)
        ));
        ring.stabilize();
        assert_eq!(ring.lookup(id(20), id(55)).unwrap().owner, id(120));
        assert_eq!(ring.node(id(20)).unwrap().routing.successors[0], id(120));
    }

    #[test]
    fn empty_and_too_small() {
        assert_eq!(responsible_node(&[], id(1)), Err(ChordError::EmptyRing));
        assert_eq!(
            replica_set(&[id(1), id(2)], id(1), 2),
            Err(ChordError::NotEnoughNodes {
                needed: 3,
                available: 2
            })
        );
    }

    #[test]
    fn single_node_ring() {
        let mut ring = ChordRing::new(IdSpace::default(), 8);
        let me = ring.join("10.0.0.1:8333").unwrap();
        ring.stabilize();
        let t = &ring.node(me).unwrap().routing;
        assert_eq!(t.successors, vec![me]);
        assert_eq!(t.predecessor, Some(me));
        for key in [0u128, 1, u64::MAX as u128] {
            assert_eq!(
                ring.lookup(me, id(key)).unwrap(),
                Lookup { owner: me, hops: 0 }
            );
        }
    }

    #[test]
    fn collisions_and_unknown_nodes() {
        let mut ring = four_node_ring();
        assert_eq!(
            ring.join_with_id("dup", id(70)),
            Err(ChordError::IdCollision(id(70)))
        );
        assert!(matches!(
            ring.leave(id(71)),
            Err(ChordError::UnknownNode(_))
        ));
        assert!(matches!(
            ring.lookup(id(71), id(3)),
            Err(ChordError::UnknownNode(_))
        ));
    }

    #[test]
    fn stabilize_is_idempotent() {
        let mut ring = four_node_ring();
        let before = ring.snapshot();
        let stats = ring.stabilize();
        assert_eq!(stats.messages, 0);
        assert_eq!(stats.nodes_changed, 0);
        assert_eq!(ring.snapshot(), before);
    }

    #[test]
    fn origin_owning_key_costs_nothing() {
        let ring = four_node_ring();
        assert_eq!(ring.lookup(id(120), id(100)).unwrap().hops, 0);
        assert_eq!(ring.lookup(id(120), id(120)).unwrap().hops, 0);
    }

    #[test]
    fn snapshot_format() {
        let snap = four_node_ring().snapshot();
        let mut lines = snap.lines();
        assert_eq!(lines.next(), Some("ring m=8 suc=2 nodes=4 stable=true"));
        assert_eq!(
            lines.next(),
            Some("14 addr=n20 pred=fa succ=[46,78] fingers=[0-5:46,6-6:78,7-7:fa]")
        );
    }
}
