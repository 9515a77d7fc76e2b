use std::collections::HashMap;

use crate::chain::{BlockHeader, Hash256, UtxoSet};

/// What a cluster node keeps locally: the UTXO set and the header chain
/// (80 bytes per block), never the block bodies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeState {
    utxoset: UtxoSet,
    headers: Vec<BlockHeader>,
    ids: Vec<Hash256>,
    heights: HashMap<Hash256, usize>,
}

impl NodeState {
    pub(crate) fn new(utxoset: UtxoSet, headers: Vec<BlockHeader>) -> NodeState {
        let ids: Vec<Hash256> = headers.iter().map(BlockHeader::id).collect();
        let heights = ids.iter().enumerate().map(|(h, id)| (*id, h)).collect();
        NodeState {
            utxoset,
            headers,
            ids,
            heights,
        }
    }

    pub fn utxoset(&self) -> &UtxoSet {
        &self.utxoset
    }

    pub fn tip(&self) -> Option<Hash256> {
        self.ids.last().copied()
    }

    /// Number of blocks in the node's chain.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Block ids by height.
    pub fn header_index(&self) -> &[Hash256] {
        &self.ids
    }

    pub fn headers(&self) -> &[BlockHeader] {
        &self.headers
    }

    pub fn height_of(&self, id: &Hash256) -> Option<usize> {
        self.heights.get(id).copied()
    }

    /// Cumulative work of the blocks above `height`.
    pub fn work_above(&self, height: usize) -> u128 {
        self.headers[height + 1..]
            .iter()
            .map(BlockHeader::work)
            .sum()
    }

    pub(crate) fn extend(&mut self, header: BlockHeader, utxoset: UtxoSet) {
        let id = header.id();
        self.heights.insert(id, self.ids.len());
        self.ids.push(id);
        self.headers.push(header);
        self.utxoset = utxoset;
    }
}
