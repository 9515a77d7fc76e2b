use thiserror::Error;

use super::{hash_header, Block, TxError, UtxoSet, MAX_BLOCK_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("block {0} does not link to its predecessor")]
    BrokenLink(usize),
    #[error("block {0} does not meet its difficulty target")]
    BadPow(usize),
    #[error("block {0} merkle root does not match its transactions")]
    BadMerkle(usize),
    #[error("block {0} exceeds the maximum block size")]
    Oversize(usize),
    #[error("block {height} transaction {position}: {cause}")]
    BadTx {
        height: usize,
        position: usize,
        cause: TxError,
    },
}

/// Full validation of a chain from genesis.
///
/// The hash links are checked over the whole chain first, so a header edit
/// at height `h` reports `BrokenLink(h + 1)` regardless of what else the
/// edit broke (or `BrokenLink(h)` when it hit the previous-hash field). Each block is then checked for proof of work, size and
/// Merkle commitment, and its transactions are replayed.
pub fn verify_chain(blocks: &[Block]) -> Result<UtxoSet, ChainError> {
    for height in 1..blocks.len() {
        if blocks[height].header.hash_prev_block != hash_header(&blocks[height - 1].header) {
            return Err(ChainError::BrokenLink(height));
        }
    }
    let mut utxo = UtxoSet::new();
    for (height, block) in blocks.iter().enumerate() {
        if !block.header.meets_target() {
            return Err(ChainError::BadPow(height));
        }
        if block.nominal_size > MAX_BLOCK_SIZE {
            return Err(ChainError::Oversize(height));
        }
        if !block.merkle_matches() {
            return Err(ChainError::BadMerkle(height));
        }
        utxo.apply(block).map_err(|e| ChainError::BadTx {
            height,
            position: e.position,
            cause: e.cause,
        })?;
    }
    Ok(utxo)
}
