//! Simplified Bitcoin chain model.
//!
//! Blocks carry an 80-byte header (previous block hash, Merkle root,
//! difficulty bits, nonce) and either a full transaction list or, for very
//! large placement experiments, nothing but a nominal size. The block id is
//! the single SHA-256 digest of the canonical header bytes; see
//! [`codec`] for the byte layout.

pub mod codec;
mod synth;
mod utxo;
mod verify;

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use synth::{
    make_placement_chain, make_synthetic_chain, wallet_script, InvalidParams, SYNTHETIC_BITS,
};
pub use utxo::{apply_block, build_utxoset, verify_transaction, BlockTxError, TxError, UtxoSet};
pub use verify::{verify_chain, ChainError};

/// Largest nominal block size, in bytes (1 MB, decimal).
pub const MAX_BLOCK_SIZE: u64 = 1_000_000;

/// Serialized header length.
pub const HEADER_LEN: usize = 80;

/// Coinbase subsidy paid by every synthetic block, in satoshi.
pub const BLOCK_REWARD: u64 = 50 * 100_000_000;

/// A 32-byte digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    pub fn digest(data: &[u8]) -> Hash256 {
        Hash256(Sha256::digest(data).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Number of leading zero bits, reading the digest as a big-endian integer.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", self.to_hex())
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Reference to a transaction output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutPoint {
    pub txid: Hash256,
    pub index: u32,
}

impl OutPoint {
    /// The outpoint every coinbase input carries.
    pub const NULL: OutPoint = OutPoint {
        txid: Hash256::ZERO,
        index: 0,
    };
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxOut {
    pub amount: u64,
    /// Opaque recipient identifier.
    pub locking_script: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxIn {
    pub prev_out: OutPoint,
    /// Opaque spender identifier; must equal the spent output's locking script.
    pub unlocking_script: Vec<u8>,
}

/// A transaction. The txid is computed on construction and kept in sync
/// with the contents, so the fields are read-only.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    inputs: Vec<TxIn>,
    outputs: Vec<TxOut>,
    txid: Hash256,
}

impl Transaction {
    pub fn new(inputs: Vec<TxIn>, outputs: Vec<TxOut>) -> Transaction {
        let mut tx = Transaction {
            inputs,
            outputs,
            txid: Hash256::ZERO,
        };
        tx.txid = Hash256::digest(&codec::encode_transaction(&tx));
        tx
    }

    /// A coinbase paying `amount` to `recipient`. The tag goes into the
    /// unlocking script so coinbases at different heights get distinct txids.
    pub fn coinbase(tag: &[u8], amount: u64, recipient: &[u8]) -> Transaction {
        Transaction::new(
            vec![TxIn {
                prev_out: OutPoint::NULL,
                unlocking_script: tag.to_vec(),
            }],
            vec![TxOut {
                amount,
                locking_script: recipient.to_vec(),
            }],
        )
    }

    pub fn inputs(&self) -> &[TxIn] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[TxOut] {
        &self.outputs
    }

    pub fn txid(&self) -> Hash256 {
        self.txid
    }

    pub fn is_coinbase(&self) -> bool {
        self.inputs.len() == 1 && self.inputs[0].prev_out == OutPoint::NULL
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|o| o.amount).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BlockHeader {
    pub hash_prev_block: Hash256,
    pub hash_merkle_root: Hash256,
    /// Difficulty: the number of leading zero bits the header digest needs.
    pub bits: u64,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        codec::encode_header(self)
    }

    pub fn id(&self) -> Hash256 {
        hash_header(self)
    }

    /// The header digest, read as a 256-bit big-endian integer, is below
    /// `2^(256 - bits)`.
    pub fn meets_target(&self) -> bool {
        self.bits <= 256 && u64::from(hash_header(self).leading_zero_bits()) >= self.bits
    }

    /// Expected number of hashes to find a valid nonce, `2^bits`.
    pub fn work(&self) -> u128 {
        1u128 << self.bits.min(127)
    }

    /// Searches nonces upward from the current one until the target is met.
    pub fn mine(mut self) -> BlockHeader {
        while !self.meets_target() {
            self.nonce = self.nonce.wrapping_add(1);
        }
        self
    }
}

/// What a block carries besides its header.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BlockContent {
    Transactions(Vec<Transaction>),
    /// Placement-only mode: the block exists for storage accounting and
    /// has no transactions to verify.
    PlacementOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub header: BlockHeader,
    pub content: BlockContent,
    pub nominal_size: u64,
}

impl Block {
    /// Builds and mines a full-content block on top of `prev`.
    pub fn assemble(prev: Hash256, txs: Vec<Transaction>, bits: u64) -> Block {
        let txids: Vec<Hash256> = txs.iter().map(Transaction::txid).collect();
        let root = merkle_root(&txids).unwrap_or(Hash256::ZERO);
        let header = BlockHeader {
            hash_prev_block: prev,
            hash_merkle_root: root,
            bits,
            nonce: 0,
        }
        .mine();
        let mut block = Block {
            header,
            content: BlockContent::Transactions(txs),
            nominal_size: 0,
        };
        block.nominal_size = codec::encode_block(&block).len() as u64;
        block
    }

    pub fn id(&self) -> Hash256 {
        hash_header(&self.header)
    }

    pub fn transactions(&self) -> &[Transaction] {
        match &self.content {
            BlockContent::Transactions(txs) => txs,
            BlockContent::PlacementOnly => &[],
        }
    }

    pub fn is_placement_only(&self) -> bool {
        matches!(self.content, BlockContent::PlacementOnly)
    }

    /// Whether the header's Merkle root commits to the carried transactions.
    /// Placement-only blocks have nothing to check.
    pub fn merkle_matches(&self) -> bool {
        match &self.content {
            BlockContent::PlacementOnly => true,
            BlockContent::Transactions(txs) => {
                let txids: Vec<Hash256> = txs.iter().map(Transaction::txid).collect();
                merkle_root(&txids).ok() == Some(self.header.hash_merkle_root)
            }
        }
    }
}

pub fn hash_header(header: &BlockHeader) -> Hash256 {
    Hash256::digest(&codec::encode_header(header))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("merkle root of an empty list")]
    EmptyList,
}

/// Pairwise hash tree over `txids`; odd levels repeat their last element.
/// A single leaf is its own root.
pub fn merkle_root(txids: &[Hash256]) -> Result<Hash256, MerkleError> {
    if txids.is_empty() {
        return Err(MerkleError::EmptyList);
    }
    let mut level = txids.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks_exact(2)
            .map(|pair| {
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(&pair[0].0);
                buf[32..].copy_from_slice(&pair[1].0);
                Hash256::digest(&buf)
            })
            .collect();
    }
    Ok(level[0])
}
