//! Storage-rewriting attacker.
//!
//! The attacker controls the block shards of a set of compromised nodes and
//! can overwrite stored bytes, but cannot change the key a block is looked
//! up by. Honest nodes detect rewritten copies because they no longer hash
//! to the requested id, and fall back to replicas.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::chain::codec::{decode_transaction, encode_block, encode_transaction};
use crate::chain::{Block, BlockContent, Hash256};
use crate::chord::RingId;
use crate::cluster::{Cluster, ClusterError, ForkOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("node {node} holds no copy of {id}")]
    NoCopyHeld { node: RingId, id: Hash256 },
    #[error("edit at offset {offset} outside {len} bytes")]
    OffsetOutOfRange { offset: usize, len: usize },
    #[error("target transaction not found")]
    TargetNotFound,
    #[error("mutated transaction does not decode")]
    InvalidMutation,
    #[error("compromised node {0} is not a cluster member")]
    UnknownNode(RingId),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ByteEdit {
    pub offset: usize,
    pub value: u8,
}

/// A list of byte overwrites. Empty is the identity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mutation {
    pub edits: Vec<ByteEdit>,
}

impl Mutation {
    pub fn identity() -> Mutation {
        Mutation::default()
    }

    pub fn set_byte(offset: usize, value: u8) -> Mutation {
        Mutation {
            edits: vec![ByteEdit { offset, value }],
        }
    }

    /// Flips every bit of the byte at `offset` in `target`.
    pub fn flip_byte(target: &[u8], offset: usize) -> Mutation {
        Mutation::set_byte(offset, !target.get(offset).copied().unwrap_or(0))
    }

    pub fn apply(&self, bytes: &mut [u8]) -> Result<(), AdversaryError> {
        for e in &self.edits {
            let len = bytes.len();
            *bytes
                .get_mut(e.offset)
                .ok_or(AdversaryError::OffsetOutOfRange {
                    offset: e.offset,
                    len,
                })? = e.value;
        }
        Ok(())
    }
}

/// Overwrites `node`'s stored copy of `id` in place. The storage key stays.
pub fn tamper_block(
    cluster: &mut Cluster,
    node: RingId,
    id: &Hash256,
    mutation: &Mutation,
) -> Result<(), AdversaryError> {
    let mut bytes = cluster
        .stored_copy(node, id)
        .ok_or(AdversaryError::NoCopyHeld { node, id: *id })?
        .to_vec();
    mutation.apply(&mut bytes)?;
    cluster.replace_copy(node, *id, bytes);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TxLocation {
    pub height: usize,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackPlan {
    pub target: TxLocation,
    pub compromised: BTreeSet<RingId>,
    /// Applied to the canonical encoding of the target transaction.
    pub mutation: Mutation,
}

/// Copies an attacker must rewrite to keep the target block and the `S`
/// blocks stacked on it internally consistent: `(R + 1) × (S + 1)`.
pub fn copies_required(replicas: usize, stack_depth: usize) -> u64 {
    (replicas as u64 + 1) * (stack_depth as u64 + 1)
}

/// The same count restricted to the stacked blocks: `(R + 1) × S`.
pub fn copies_required_stacked_only(replicas: usize, stack_depth: usize) -> u64 {
    (replicas as u64 + 1) * stack_depth as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CampaignReport {
    pub target_height: usize,
    pub target_position: usize,
    pub stack_depth: usize,
    pub replicas: usize,
    pub compromised_nodes: usize,
    pub blocks_required: u64,
    pub blocks_required_stacked_only: u64,
    /// Copies of the affected blocks that exist in the cluster.
    pub copies_stored: u64,
    pub copies_reached: u64,
    /// Every copy of every affected block was rewritten with re-linked hashes.
    pub fully_consistent: bool,
    /// Affected blocks for which the honest verifier got the original back.
    pub originals_served: usize,
    /// Affected blocks for which the verifier saw a copy fail the hash check.
    pub hash_check_failures: usize,
    /// Only evaluated when fully consistent: the verifier kept its own chain
    /// when offered the rewritten branch.
    pub fork_rejected: Option<bool>,
    /// The honest verifier did not accept the rewritten transaction.
    pub detected: bool,
}

/// Runs the transaction-rewriting attack described by `plan`.
///
/// The compromised nodes rewrite their copies of the target block and of
/// every block stacked on it, re-linking hashes and re-mining each header.
/// An honest verifier (the lowest-id uncompromised node, or the lowest-id
/// node when all are compromised, whose local header chain is intact) then
/// fetches every affected block by its original id; when the rewrite
/// reached every copy, the rewritten branch is also offered to it as a fork.
pub fn rewrite_campaign(
    cluster: &mut Cluster,
    plan: &AttackPlan,
) -> Result<CampaignReport, AdversaryError> {
    if let Some(n) = plan.compromised.iter().find(|n| !cluster.contains(**n)) {
        return Err(AdversaryError::UnknownNode(*n));
    }
    let node_ids = cluster.node_ids();
    let verifier = node_ids
        .iter()
        .find(|n| !plan.compromised.contains(n))
        .or(node_ids.first())
        .copied()
        .ok_or(AdversaryError::TargetNotFound)?;
    let chain_ids: Vec<Hash256> = cluster
        .state(verifier)
        .map(|s| s.header_index().to_vec())
        .unwrap_or_default();
    let TxLocation { height, position } = plan.target;
    if height >= chain_ids.len() {
        return Err(AdversaryError::TargetNotFound);
    }
    let stack_depth = chain_ids.len() - 1 - height;
    let replicas = cluster.config().replicas;
    let affected = &chain_ids[height..];

    let originals: Vec<Block> = affected
        .iter()
        .map(|id| {
            cluster
                .read_valid_copy(id)
                .ok_or(ClusterError::NotFound(*id))
        })
        .collect::<Result<_, _>>()?;
    let target_tx = originals[0]
        .transactions()
        .get(position)
        .ok_or(AdversaryError::TargetNotFound)?;
    let mut tx_bytes = encode_transaction(target_tx);
    plan.mutation.apply(&mut tx_bytes)?;
    let forged_tx = decode_transaction(&tx_bytes).map_err(|_| AdversaryError::InvalidMutation)?;

    let mut rewritten: Vec<Block> = Vec::with_capacity(originals.len());
    let mut prev = originals[0].header.hash_prev_block;
    for (i, original) in originals.iter().enumerate() {
        let mut txs = original.transactions().to_vec();
        if i == 0 {
            txs[position] = forged_tx.clone();
        }
        let block = match original.content {
            BlockContent::Transactions(_) => Block::assemble(prev, txs, original.header.bits),
            BlockContent::PlacementOnly => Block {
                header: crate::chain::BlockHeader {
                    hash_prev_block: prev,
                    nonce: 0,
                    ..original.header
                }
                .mine(),
                ..original.clone()
            },
        };
        prev = block.id();
        rewritten.push(block);
    }

    let mut copies_stored = 0;
    let mut copies_reached = 0;
    for (original_id, forged) in affected.iter().zip(&rewritten) {
        let bytes = encode_block(forged);
        for holder in cluster.holders(original_id)? {
            if cluster.stored_copy(holder, original_id).is_none() {
                continue;
            }
            copies_stored += 1;
            if plan.compromised.contains(&holder) {
                cluster.replace_copy(holder, *original_id, bytes.clone());
                copies_reached += 1;
            }
        }
    }
    let fully_consistent = copies_reached > 0 && copies_reached == copies_stored;
    if fully_consistent {
        // make the forged branch retrievable under its own ids
        for forged in &rewritten {
            let id = forged.id();
            for holder in cluster.holders(&id)? {
                if plan.compromised.contains(&holder) {
                    cluster.put_copy(holder, id, encode_block(forged));
                }
            }
        }
    }

    let mut report = CampaignReport {
        target_height: height,
        target_position: position,
        stack_depth,
        replicas,
        compromised_nodes: plan.compromised.len(),
        blocks_required: copies_required(replicas, stack_depth),
        blocks_required_stacked_only: copies_required_stacked_only(replicas, stack_depth),
        copies_stored,
        copies_reached,
        fully_consistent,
        originals_served: 0,
        hash_check_failures: 0,
        fork_rejected: None,
        detected: true,
    };
    if copies_reached == 0 {
        report.originals_served = affected.len();
        return Ok(report);
    }

    let mut every_block_safe = true;
    for (id, original) in affected.iter().zip(&originals) {
        match cluster.get_block(verifier, id) {
            Ok(fetched) => {
                if fetched.block == *original {
                    report.originals_served += 1;
                } else {
                    every_block_safe = false;
                }
                if fetched.attempts > 1
                    && cluster.stored_copy(cluster.holders(id)?[0], id).is_some()
                {
                    report.hash_check_failures += 1;
                }
            }
            Err(ClusterError::AllReplicasCorrupt(_)) => report.hash_check_failures += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if fully_consistent {
        let tip = rewritten.last().expect("at least the target block");
        let rejected = match cluster.resolve_fork(verifier, tip) {
            Ok(res) => res.outcome == ForkOutcome::KeepCurrent,
            Err(ClusterError::OrphanBranch) | Err(ClusterError::InvalidBranch { .. }) => true,
            Err(e) => return Err(e.into()),
        };
        report.fork_rejected = Some(rejected);
        every_block_safe &= rejected;
    }
    report.detected = every_block_safe;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::make_synthetic_chain;
    use crate::cluster::{ClusterConfig, NodeSpec, VerifiedChain};

    fn cluster(n: usize, blocks: usize, replicas: usize) -> Cluster {
        let chain = VerifiedChain::new(make_synthetic_chain(blocks, 3, 11).unwrap()).unwrap();
        let specs: Vec<NodeSpec> = (0..n).map(|i| NodeSpec::new(format!("n{i}"))).collect();
        Cluster::provision(&specs, &chain, b"k", ClusterConfig::with_replicas(replicas)).unwrap()
    }

    fn redirect(cluster: &Cluster) -> Mutation {
        let id = cluster.state(cluster.node_ids()[0]).unwrap().header_index()[1];
        let block = cluster.read_valid_copy(&id).unwrap();
        let bytes = encode_transaction(&block.transactions()[1]);
        Mutation::flip_byte(&bytes, bytes.len() - 1)
    }

    fn plan(compromised: BTreeSet<RingId>, mutation: Mutation) -> AttackPlan {
        AttackPlan {
            target: TxLocation {
                height: 1,
                position: 1,
            },
            compromised,
            mutation,
        }
    }

    #[test]
    fn required_copies() {
        assert_eq!(copies_required(2, 4), 15);
        assert_eq!(copies_required_stacked_only(2, 4), 12);
        assert_eq!(copies_required(0, 0), 1);
    }

    #[test]
    fn full_compromise_rewrites_everything_but_is_still_caught() {
        let mut c = cluster(10, 6, 2);
        let all: BTreeSet<RingId> = c.node_ids().into_iter().collect();
        let m = redirect(&c);
        let report = rewrite_campaign(&mut c, &plan(all, m)).unwrap();
        assert_eq!(report.stack_depth, 4);
        assert_eq!(report.blocks_required, 15);
        assert_eq!(report.copies_stored, 15);
        assert_eq!(report.copies_reached, 15);
        assert!(report.fully_consistent);
        assert_eq!(report.originals_served, 0);
        assert_eq!(report.fork_rejected, Some(true));
        assert!(report.detected);
    }

    #[test]
    fn partial_compromise_serves_originals_or_flags_corruption() {
        let mut c = cluster(10, 6, 2);
        let some: BTreeSet<RingId> = c.node_ids().into_iter().step_by(2).collect();
        let m = redirect(&c);
        let report = rewrite_campaign(&mut c, &plan(some, m)).unwrap();
        assert!(report.copies_reached > 0 && report.copies_reached < report.copies_stored);
        assert!(!report.fully_consistent);
        assert_eq!(report.fork_rejected, None);
        assert!(report.detected);
        assert!(report.originals_served + report.hash_check_failures >= 5);
    }

    #[test]
    fn no_compromised_nodes_leaves_cluster_untouched() {
        let mut c = cluster(8, 4, 1);
        let before = c.snapshot();
        let copies: Vec<_> = c.stored_ids();
        let m = redirect(&c);
        let report = rewrite_campaign(&mut c, &plan(BTreeSet::new(), m)).unwrap();
        assert_eq!(report.copies_reached, 0);
        assert!(report.detected);
        assert_eq!(c.snapshot(), before);
        assert_eq!(c.stored_ids(), copies);
    }

    #[test]
    fn identity_mutation_reproduces_the_chain() {
        let mut c = cluster(8, 4, 1);
        let before = c.snapshot();
        let all: BTreeSet<RingId> = c.node_ids().into_iter().collect();
        let report = rewrite_campaign(&mut c, &plan(all, Mutation::identity())).unwrap();
        assert!(report.fully_consistent);
        assert_eq!(report.fork_rejected, Some(true));
        assert_eq!(c.snapshot(), before);
    }

    #[test]
    fn bad_mutations_are_reported() {
        let mut c = cluster(6, 3, 1);
        let all: BTreeSet<RingId> = c.node_ids().into_iter().collect();
        let far = plan(all.clone(), Mutation::set_byte(1 << 20, 0));
        assert!(matches!(
            rewrite_campaign(&mut c, &far),
            Err(AdversaryError::OffsetOutOfRange { .. })
        ));
        // input count 0xff.. makes the encoding truncated
        let garbled = plan(all, Mutation::set_byte(3, 0xff));
        assert_eq!(
            rewrite_campaign(&mut c, &garbled),
            Err(AdversaryError::InvalidMutation)
        );
        let stranger = RingId::from_u128(12345);
        let unknown = plan([stranger].into_iter().collect(), Mutation::identity());
        assert_eq!(
            rewrite_campaign(&mut c, &unknown),
            Err(AdversaryError::UnknownNode(stranger))
        );
    }

    #[test]
    fn tamper_requires_a_held_copy() {
        let mut c = cluster(6, 3, 1);
        let id = c.stored_ids()[0];
        let outsider = c
            .node_ids()
            .into_iter()
            .find(|n| !c.holders(&id).unwrap().contains(n))
            .unwrap();
        assert_eq!(
            tamper_block(&mut c, outsider, &id, &Mutation::identity()),
            Err(AdversaryError::NoCopyHeld { node: outsider, id })
        );
    }
}
