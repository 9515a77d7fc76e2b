//! Block storage sharded over a Chord ring.
//!
//! Each block lives on the node responsible for `ring_id(block id)` and on
//! that node's `R` clockwise successors. Nodes keep the UTXO set and header
//! chain locally and fetch block bodies from the cluster, accepting a
//! response only if it hashes to the requested id.

mod fork;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::chain::codec::{decode_block, encode_block};
use crate::chain::{verify_chain, Block, ChainError, Hash256, TxError, UtxoSet};
use crate::chord::{space_id, ChordError, ChordRing, IdSpace, RingId, StabilizeStats};
use crate::metrics::{MessageTrace, Operation, TraceEntry};

pub use fork::{ForkOutcome, ForkResolution};
pub use state::NodeState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("chain failed verification: {0}")]
    InvalidChain(#[from] ChainError),
    #[error("presented cluster key does not match")]
    JoinRejected,
    #[error("node id {0} already in the cluster")]
    IdCollision(RingId),
    #[error("unknown node {0}")]
    UnknownNode(RingId),
    #[error("no node holds block {0}")]
    NotFound(Hash256),
    #[error("every copy of block {0} fails the integrity check")]
    AllReplicasCorrupt(Hash256),
    #[error("branch ancestry never meets the local chain")]
    OrphanBranch,
    #[error("branch block at height {height} is invalid: {reason}")]
    InvalidBranch { height: usize, reason: String },
    #[error("block {height} fetched during rebuild does not apply: {cause}")]
    RebuildFailed { height: usize, cause: TxError },
    #[error("the last node cannot leave")]
    LastNode,
    #[error("replicas ({replicas}) must not exceed successors ({suc})")]
    BadConfig { replicas: usize, suc: usize },
    #[error(transparent)]
    Chord(ChordError),
}

impl From<ChordError> for ClusterError {
    fn from(e: ChordError) -> Self {
        match e {
            ChordError::IdCollision(id) => ClusterError::IdCollision(id),
            ChordError::UnknownNode(id) => ClusterError::UnknownNode(id),
            other => ClusterError::Chord(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterConfig {
    /// Identifier circle width `m`.
    pub id_bits: u32,
    /// Copies kept besides the primary.
    pub replicas: usize,
    /// Successor-list length.
    pub suc: usize,
}

impl ClusterConfig {
    /// 64-bit ids and `suc = max(replicas, 8)`.
    pub fn with_replicas(replicas: usize) -> ClusterConfig {
        ClusterConfig {
            id_bits: 64,
            replicas,
            suc: replicas.max(8),
        }
    }

    fn validate(&self) -> Result<IdSpace, ClusterError> {
        if self.replicas > self.suc {
            return Err(ClusterError::BadConfig {
                replicas: self.replicas,
                suc: self.suc,
            });
        }
        Ok(IdSpace::new(self.id_bits)?)
    }
}

/// How a node enters the overlay: by address, or with an injected id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSpec {
    pub address: String,
    pub id: Option<RingId>,
}

impl NodeSpec {
    pub fn new(address: impl Into<String>) -> NodeSpec {
        NodeSpec {
            address: address.into(),
            id: None,
        }
    }

    pub fn with_id(address: impl Into<String>, id: u128) -> NodeSpec {
        NodeSpec {
            address: address.into(),
            id: Some(RingId::from_u128(id)),
        }
    }
}

/// A chain that passed [`verify_chain`], with its final UTXO set.
#[derive(Clone, Debug)]
pub struct VerifiedChain {
    blocks: Vec<Block>,
    utxoset: UtxoSet,
}

impl VerifiedChain {
    pub fn new(blocks: Vec<Block>) -> Result<VerifiedChain, ChainError> {
        let utxoset = verify_chain(&blocks)?;
        Ok(VerifiedChain { blocks, utxoset })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn utxoset(&self) -> &UtxoSet {
        &self.utxoset
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }
}

/// A block returned by [`Cluster::get_block`] with what it cost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fetched {
    pub block: Block,
    pub hops: u64,
    /// Copies requested, including ones that failed the integrity check.
    pub attempts: u64,
}

impl Fetched {
    pub fn messages(&self) -> u64 {
        self.hops + self.attempts
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinReport {
    pub node: RingId,
    /// Lookup hops plus transfers spent fetching every block to rebuild the
    /// UTXO set.
    pub messages: u64,
    pub lookup_hops: u64,
    pub transfers: u64,
    pub blocks_fetched: usize,
    pub stabilize: StabilizeStats,
    /// Copies moved to restore replica placement.
    pub repair_transfers: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectCause {
    BadPow,
    BadMerkle,
    Oversize,
    BadTx { position: usize, cause: TxError },
    UnknownParent,
    AlreadyKnown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reception {
    /// Extended the node's tip; the block was stored at this many messages.
    Accepted {
        store_messages: u64,
    },
    Forked(ForkResolution),
    Rejected(RejectCause),
}

#[derive(Clone, Debug)]
struct Member {
    address: String,
    shard: HashMap<Hash256, Arc<[u8]>>,
    state: Arc<NodeState>,
}

#[derive(Clone, Debug)]
pub struct Cluster {
    config: ClusterConfig,
    ring: ChordRing,
    members: BTreeMap<RingId, Member>,
    cluster_key: Vec<u8>,
    trace: MessageTrace,
}

/// The ring key a block is stored under.
pub fn block_key(block: &Block, space: IdSpace) -> RingId {
    id_key(&block.id(), space)
}

fn id_key(id: &Hash256, space: IdSpace) -> RingId {
    space_id(space, id.as_bytes())
}

/// Decodes a stored copy and checks it against the id it was requested by:
/// the header must hash to `id`, the Merkle root must commit to the body,
/// and a full-content block's size field must equal its encoded length.
/// A placement-only block's declared size is not covered by anything.
pub fn verify_copy(bytes: &[u8], id: &Hash256) -> Option<Block> {
    let block = decode_block(bytes).ok()?;
    let size_ok = block.is_placement_only() || block.nominal_size == bytes.len() as u64;
    (block.id() == *id && block.merkle_matches() && size_ok).then_some(block)
}

impl Cluster {
    /// Starts a single-node cluster whose only node stores the whole chain.
    pub fn bootstrap(
        initial: NodeSpec,
        chain: &[Block],
        key: &[u8],
        config: ClusterConfig,
    ) -> Result<Cluster, ClusterError> {
        let verified = VerifiedChain::new(chain.to_vec())?;
        Cluster::provision(&[initial], &verified, key, config)
    }

    /// A cluster whose members all hold the verified chain's header index
    /// and UTXO set, with every block already at its replica holders.
    pub fn provision(
        members: &[NodeSpec],
        chain: &VerifiedChain,
        key: &[u8],
        config: ClusterConfig,
    ) -> Result<Cluster, ClusterError> {
        let space = config.validate()?;
        let mut ring = ChordRing::new(space, config.suc);
        let state = Arc::new(NodeState::new(
            chain.utxoset.clone(),
            chain.blocks.iter().map(|b| b.header).collect(),
        ));
        let mut nodes = BTreeMap::new();
        for spec in members {
            let id = spec
                .id
                .unwrap_or_else(|| ring.id_for_address(&spec.address));
            ring.join_with_id(&spec.address, id)?;
            nodes.insert(
                id,
                Member {
                    address: spec.address.clone(),
                    shard: HashMap::new(),
                    state: Arc::clone(&state),
                },
            );
        }
        ring.stabilize();
        let mut cluster = Cluster {
            config,
            ring,
            members: nodes,
            cluster_key: key.to_vec(),
            trace: MessageTrace::new(),
        };
        for block in &chain.blocks {
            let bytes: Arc<[u8]> = encode_block(block).into();
            cluster.place(block.id(), bytes)?;
        }
        Ok(cluster)
    }

    pub fn config(&self) -> ClusterConfig {
        self.config
    }

    pub fn ring(&self) -> &ChordRing {
        &self.ring
    }

    pub fn space(&self) -> IdSpace {
        self.ring.space()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn node_ids(&self) -> Vec<RingId> {
        self.members.keys().copied().collect()
    }

    pub fn contains(&self, node: RingId) -> bool {
        self.members.contains_key(&node)
    }

    pub fn address(&self, node: RingId) -> Option<&str> {
        self.members.get(&node).map(|m| m.address.as_str())
    }

    pub fn state(&self, node: RingId) -> Option<&NodeState> {
        self.members.get(&node).map(|m| m.state.as_ref())
    }

    pub fn trace(&self) -> &MessageTrace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut MessageTrace {
        &mut self.trace
    }

    /// Replicas actually kept: `R`, or everyone when the ring is smaller
    /// than `R + 1`.
    pub fn effective_replicas(&self) -> usize {
        self.config
            .replicas
            .min(self.members.len().saturating_sub(1))
    }

    pub fn key_of(&self, id: &Hash256) -> RingId {
        id_key(id, self.space())
    }

    /// Nodes that should hold `id`, primary first.
    pub fn holders(&self, id: &Hash256) -> Result<Vec<RingId>, ClusterError> {
        Ok(self
            .ring
            .replica_set(self.key_of(id), self.effective_replicas())?)
    }

    /// Nodes that currently hold some copy of `id`, valid or not, in id order.
    pub fn nodes_with_copy(&self, id: &Hash256) -> Vec<RingId> {
        self.members
            .iter()
            .filter(|(_, m)| m.shard.contains_key(id))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn shard_len(&self, node: RingId) -> Option<usize> {
        self.members.get(&node).map(|m| m.shard.len())
    }

    /// Block counts per node in ring order.
    pub fn shard_counts(&self) -> Vec<(RingId, usize)> {
        self.members
            .iter()
            .map(|(id, m)| (*id, m.shard.len()))
            .collect()
    }

    pub fn total_copies(&self) -> usize {
        self.members.values().map(|m| m.shard.len()).sum()
    }

    /// Distinct block ids over all shards.
    pub fn stored_ids(&self) -> Vec<Hash256> {
        let mut ids: Vec<Hash256> = self
            .members
            .values()
            .flat_map(|m| m.shard.keys().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn stored_copy(&self, node: RingId, id: &Hash256) -> Option<&[u8]> {
        self.members.get(&node)?.shard.get(id).map(|b| b.as_ref())
    }

    pub(crate) fn replace_copy(&mut self, node: RingId, id: Hash256, bytes: Vec<u8>) -> bool {
        match self.members.get_mut(&node) {
            Some(m) if m.shard.contains_key(&id) => {
                m.shard.insert(id, bytes.into());
                true
            }
            _ => false,
        }
    }

    pub(crate) fn put_copy(&mut self, node: RingId, id: Hash256, bytes: Vec<u8>) {
        if let Some(m) = self.members.get_mut(&node) {
            m.shard.insert(id, bytes.into());
        }
    }

    /// Any copy of `id` that passes the integrity check, read directly.
    pub(crate) fn read_valid_copy(&self, id: &Hash256) -> Option<Block> {
        self.members
            .values()
            .filter_map(|m| m.shard.get(id))
            .find_map(|bytes| verify_copy(bytes, id))
    }

    fn place(&mut self, id: Hash256, bytes: Arc<[u8]>) -> Result<usize, ClusterError> {
        let holders = self.holders(&id)?;
        for h in &holders {
            self.members
                .get_mut(h)
                .expect("holder is a member")
                .shard
                .insert(id, Arc::clone(&bytes));
        }
        Ok(holders.len())
    }

    fn is_stored(&self, id: &Hash256) -> bool {
        self.holders(id)
            .map(|hs| {
                hs.iter().any(|h| {
                    self.members[h]
                        .shard
                        .get(id)
                        .is_some_and(|b| verify_copy(b, id).is_some())
                })
            })
            .unwrap_or(false)
    }

    /// Routes to the block's primary from `origin` and writes it to every
    /// replica holder. Returns lookup hops plus one transfer per holder.
    pub fn store_block(&mut self, origin: RingId, block: &Block) -> Result<u64, ClusterError> {
        if !self.members.contains_key(&origin) {
            return Err(ClusterError::UnknownNode(origin));
        }
        let id = block.id();
        let lookup = self.ring.lookup(origin, self.key_of(&id))?;
        let copies = self.place(id, encode_block(block).into())? as u64;
        self.trace.record(TraceEntry {
            op: Operation::StoreBlock,
            lookup_hops: lookup.hops,
            transfers: copies,
            stabilize: 0,
        });
        Ok(lookup.hops + copies)
    }

    /// Looks up `id` from `requester` and fetches copies from the primary
    /// and then each replica until one hashes to `id`.
    pub fn get_block(&mut self, requester: RingId, id: &Hash256) -> Result<Fetched, ClusterError> {
        if !self.members.contains_key(&requester) {
            return Err(ClusterError::UnknownNode(requester));
        }
        let key = self.key_of(id);
        let lookup = self.ring.lookup(requester, key)?;
        let holders = self.holders(id)?;
        debug_assert_eq!(holders[0], lookup.owner);
        let mut attempts = 0;
        let mut seen_copy = false;
        let mut found = None;
        for h in &holders {
            attempts += 1;
            if let Some(bytes) = self.members[h].shard.get(id) {
                seen_copy = true;
                if let Some(block) = verify_copy(bytes, id) {
                    found = Some(block);
                    break;
                }
            }
        }
        self.trace.record(TraceEntry {
            op: Operation::GetBlock,
            lookup_hops: lookup.hops,
            transfers: attempts,
            stabilize: 0,
        });
        match found {
            Some(block) => Ok(Fetched {
                block,
                hops: lookup.hops,
                attempts,
            }),
            None if seen_copy => Err(ClusterError::AllReplicasCorrupt(*id)),
            None => Err(ClusterError::NotFound(*id)),
        }
    }

    fn stabilize(&mut self) -> StabilizeStats {
        let stats = self.ring.stabilize();
        self.trace.record(TraceEntry {
            op: Operation::Stabilize,
            lookup_hops: 0,
            transfers: 0,
            stabilize: stats.messages,
        });
        stats
    }

    /// Moves copies so every stored id sits exactly on its replica holders.
    /// New holders copy from a source that passes the integrity check;
    /// `departed` supplies the shard of a node that left gracefully.
    fn rebalance(&mut self, departed: Option<HashMap<Hash256, Arc<[u8]>>>) -> u64 {
        let mut sources: BTreeMap<Hash256, Vec<Arc<[u8]>>> = BTreeMap::new();
        for m in self.members.values() {
            for (id, bytes) in &m.shard {
                sources.entry(*id).or_default().push(Arc::clone(bytes));
            }
        }
        for (id, bytes) in departed.into_iter().flatten() {
            sources.entry(id).or_default().push(bytes);
        }
        let mut transfers = 0;
        for (id, copies) in sources {
            let holders = self.holders(&id).expect("non-empty cluster");
            for (node, m) in self.members.iter_mut() {
                if !holders.contains(node) {
                    m.shard.remove(&id);
                }
            }
            let missing: Vec<RingId> = holders
                .iter()
                .filter(|h| !self.members[*h].shard.contains_key(&id))
                .copied()
                .collect();
            if missing.is_empty() {
                continue;
            }
            let Some(good) = copies.iter().find(|b| verify_copy(b, &id).is_some()) else {
                continue;
            };
            for h in missing {
                self.members
                    .get_mut(&h)
                    .expect("member")
                    .shard
                    .insert(id, Arc::clone(good));
                transfers += 1;
            }
        }
        self.trace.record(TraceEntry {
            op: Operation::Repair,
            lookup_hops: 0,
            transfers,
            stabilize: 0,
        });
        transfers
    }

    /// The most advanced local chain view, ties broken by lowest node id.
    fn best_state(&self) -> Option<Arc<NodeState>> {
        self.members
            .values()
            .map(|m| &m.state)
            .fold(None::<&Arc<NodeState>>, |best, s| match best {
                Some(b) if b.len() >= s.len() => Some(b),
                _ => Some(s),
            })
            .cloned()
    }

    /// Admits a node holding the cluster key. The node enters the ring,
    /// stabilization and repair hand it its share of blocks, and it then
    /// rebuilds its UTXO set by fetching every block in height order.
    pub fn join_cluster(
        &mut self,
        spec: NodeSpec,
        presented_key: &[u8],
    ) -> Result<JoinReport, ClusterError> {
        if presented_key != self.cluster_key.as_slice() {
            return Err(ClusterError::JoinRejected);
        }
        let id = spec
            .id
            .unwrap_or_else(|| self.ring.id_for_address(&spec.address));
        if self.members.contains_key(&id) {
            return Err(ClusterError::IdCollision(id));
        }
        let headers = self.best_state().unwrap_or_default();
        self.ring.join_with_id(&spec.address, id)?;
        self.members.insert(
            id,
            Member {
                address: spec.address,
                shard: HashMap::new(),
                state: Arc::new(NodeState::default()),
            },
        );
        let stabilize = self.stabilize();
        let repair_transfers = self.rebalance(None);

        let mut utxo = UtxoSet::new();
        let mut lookup_hops = 0;
        let mut transfers = 0;
        for (height, block_id) in headers.header_index().iter().enumerate() {
            let fetched = self.get_block(id, block_id)?;
            lookup_hops += fetched.hops;
            transfers += fetched.attempts;
            utxo.apply(&fetched.block)
                .map_err(|e| ClusterError::RebuildFailed {
                    height,
                    cause: e.cause,
                })?;
        }
        let state = NodeState::new(utxo, headers.headers().to_vec());
        self.members.get_mut(&id).expect("just inserted").state = Arc::new(state);
        Ok(JoinReport {
            node: id,
            messages: lookup_hops + transfers,
            lookup_hops,
            transfers,
            blocks_fetched: headers.len(),
            stabilize,
            repair_transfers,
        })
    }

    /// Graceful departure: the node hands its shard over before leaving.
    pub fn leave_cluster(&mut self, node: RingId) -> Result<u64, ClusterError> {
        let member = self.remove_member(node)?;
        self.stabilize();
        Ok(self.rebalance(Some(member.shard)))
    }

    /// Abrupt departure: the node's shard is lost and replicas fill in.
    pub fn fail_node(&mut self, node: RingId) -> Result<u64, ClusterError> {
        self.remove_member(node)?;
        self.stabilize();
        Ok(self.rebalance(None))
    }

    fn remove_member(&mut self, node: RingId) -> Result<Member, ClusterError> {
        if !self.members.contains_key(&node) {
            return Err(ClusterError::UnknownNode(node));
        }
        if self.members.len() == 1 {
            return Err(ClusterError::LastNode);
        }
        self.ring.leave(node)?;
        Ok(self.members.remove(&node).expect("checked"))
    }

    /// Handles a block announced to `node`.
    pub fn receive_new_block(
        &mut self,
        node: RingId,
        block: &Block,
    ) -> Result<Reception, ClusterError> {
        let state = Arc::clone(
            &self
                .members
                .get(&node)
                .ok_or(ClusterError::UnknownNode(node))?
                .state,
        );
        if !block.header.meets_target() {
            return Ok(Reception::Rejected(RejectCause::BadPow));
        }
        if block.nominal_size > crate::chain::MAX_BLOCK_SIZE {
            return Ok(Reception::Rejected(RejectCause::Oversize));
        }
        if !block.merkle_matches() {
            return Ok(Reception::Rejected(RejectCause::BadMerkle));
        }
        let id = block.id();
        if state.height_of(&id).is_some() {
            return Ok(Reception::Rejected(RejectCause::AlreadyKnown));
        }
        let prev = block.header.hash_prev_block;
        if state.tip() == Some(prev) {
            let mut utxo = state.utxoset().clone();
            if let Err(e) = utxo.apply(block) {
                return Ok(Reception::Rejected(RejectCause::BadTx {
                    position: e.position,
                    cause: e.cause,
                }));
            }
            let member = self.members.get_mut(&node).expect("checked");
            Arc::make_mut(&mut member.state).extend(block.header, utxo);
            let store_messages = self.store_block(node, block)?;
            return Ok(Reception::Accepted { store_messages });
        }
        let parent_known = state.height_of(&prev).is_some() || self.get_block(node, &prev).is_ok();
        if !parent_known {
            return Ok(Reception::Rejected(RejectCause::UnknownParent));
        }
        let resolution = self.resolve_fork(node, block)?;
        if !self.is_stored(&id) {
            self.store_block(node, block)?;
        }
        Ok(Reception::Forked(resolution))
    }

    /// Delivers `block` to every node in ring order.
    pub fn announce_block(
        &mut self,
        block: &Block,
    ) -> Result<Vec<(RingId, Reception)>, ClusterError> {
        self.node_ids()
            .into_iter()
            .map(|n| Ok((n, self.receive_new_block(n, block)?)))
            .collect()
    }

    /// Per-node shard counts and tips as deterministic text.
    pub fn snapshot(&self) -> String {
        let space = self.space();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "cluster nodes={} replicas={} suc={} m={} copies={}",
            self.members.len(),
            self.config.replicas,
            self.config.suc,
            space.bits(),
            self.total_copies()
        );
        for (id, m) in &self.members {
            let tip = m
                .state
                .tip()
                .map(|t| t.to_hex())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{} blocks={} height={} tip={}",
                id.to_hex(space),
                m.shard.len(),
                m.state.len(),
                tip
            );
        }
        out
    }
}
