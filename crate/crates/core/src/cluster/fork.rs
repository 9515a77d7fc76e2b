use std::sync::Arc;

use crate::chain::{Block, Hash256, UtxoSet};
use crate::chord::RingId;

use super::{Cluster, ClusterError, NodeState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForkOutcome {
    KeepCurrent,
    SwitchTo { tip: Hash256 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForkResolution {
    pub outcome: ForkOutcome,
    /// Height of the last block both branches share.
    pub fork_height: usize,
    pub branch_len: usize,
    pub branch_work: u128,
    pub current_work: u128,
    /// Messages spent fetching branch ancestors from the cluster.
    pub ancestor_messages: u64,
    pub ancestors_fetched: usize,
    /// Messages spent replaying the chain after a switch.
    pub replay_messages: u64,
}

impl Cluster {
    /// Compares the branch ending at `branch_tip` with `node`'s chain.
    ///
    /// Ancestors of the tip are fetched from the cluster until one is found
    /// in the node's header index. The node switches only if the branch
    /// carries strictly more work than its own chain above the fork point;
    /// after a switch the UTXO set is rebuilt by replaying from genesis.
    pub fn resolve_fork(
        &mut self,
        node: RingId,
        branch_tip: &Block,
    ) -> Result<ForkResolution, ClusterError> {
        let state: Arc<NodeState> = Arc::clone(
            &self
                .members
                .get(&node)
                .ok_or(ClusterError::UnknownNode(node))?
                .state,
        );
        if state.is_empty() {
            return Err(ClusterError::OrphanBranch);
        }
        let mut branch = vec![branch_tip.clone()];
        let mut ancestor_messages = 0;
        let fork_height = loop {
            let parent = branch.last().expect("non-empty").header.hash_prev_block;
            if let Some(h) = state.height_of(&parent) {
                break h;
            }
            if branch.len() >= state.len() {
                return Err(ClusterError::OrphanBranch);
            }
            let fetched = match self.get_block(node, &parent) {
                Ok(f) => f,
                Err(ClusterError::NotFound(_)) => return Err(ClusterError::OrphanBranch),
                Err(e) => return Err(e),
            };
            ancestor_messages += fetched.messages();
            branch.push(fetched.block);
        };
        branch.reverse();
        if let Some(bad) = branch.iter().position(|b| !b.header.meets_target()) {
            return Err(ClusterError::InvalidBranch {
                height: fork_height + 1 + bad,
                reason: "proof of work".into(),
            });
        }
        let ancestors_fetched = branch.len() - 1;
        let branch_work: u128 = branch.iter().map(|b| b.header.work()).sum();
        let current_work = state.work_above(fork_height);
        let mut resolution = ForkResolution {
            outcome: ForkOutcome::KeepCurrent,
            fork_height,
            branch_len: branch.len(),
            branch_work,
            current_work,
            ancestor_messages,
            ancestors_fetched,
            replay_messages: 0,
        };
        if branch_work <= current_work {
            return Ok(resolution);
        }

        let mut utxo = UtxoSet::new();
        let mut headers = Vec::with_capacity(fork_height + 1 + branch.len());
        for (height, id) in state.header_index()[..=fork_height].iter().enumerate() {
            let fetched = self.get_block(node, id)?;
            resolution.replay_messages += fetched.messages();
            utxo.apply(&fetched.block)
                .map_err(|e| ClusterError::RebuildFailed {
                    height,
                    cause: e.cause,
                })?;
            headers.push(fetched.block.header);
        }
        for (offset, block) in branch.iter().enumerate() {
            utxo.apply(block).map_err(|e| ClusterError::InvalidBranch {
                height: fork_height + 1 + offset,
                reason: e.to_string(),
            })?;
            headers.push(block.header);
        }
        for block in &branch {
            if !self.is_stored(&block.id()) {
                self.store_block(node, block)?;
            }
        }
        let tip = branch_tip.id();
        self.members.get_mut(&node).expect("member").state =
            Arc::new(NodeState::new(utxo, headers));
        resolution.outcome = ForkOutcome::SwitchTo { tip };
        Ok(resolution)
    }
}
