//! Seeded workload generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Block, BlockContent, BlockHeader, Hash256, OutPoint, Transaction, TxIn, TxOut, BLOCK_REWARD,
    MAX_BLOCK_SIZE,
};

/// Difficulty of generated blocks: four leading zero bits, so about one
/// nonce in sixteen is accepted.
pub const SYNTHETIC_BITS: u64 = 4;

const WALLETS: usize = 16;

pub fn wallet_script(index: usize) -> Vec<u8> {
    format!("wallet-{index:02}").into_bytes()
}

fn coinbase_for(seed: u64, height: usize) -> Transaction {
    Transaction::coinbase(
        format!("coinbase/{seed}/{height}").as_bytes(),
        BLOCK_REWARD,
        &wallet_script(height % WALLETS),
    )
}

/// A deterministic, fully valid chain of `block_count` blocks.
///
/// Every block starts with a coinbase; blocks after genesis add up to
/// `txs_per_block - 1` transactions, each spending one output created in an
/// earlier block and splitting it between one or two wallets with zero fee.
pub fn make_synthetic_chain(
    block_count: usize,
    txs_per_block: usize,
    seed: u64,
) -> Result<Vec<Block>, InvalidParams> {
    if block_count == 0 || txs_per_block == 0 {
        return Err(InvalidParams);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spendable: Vec<(OutPoint, TxOut)> = Vec::new();
    let mut blocks: Vec<Block> = Vec::with_capacity(block_count);
    let mut prev = Hash256::ZERO;
    for height in 0..block_count {
        let mut txs = vec![coinbase_for(seed, height)];
        if height > 0 {
            for _ in 1..txs_per_block {
                if spendable.is_empty() {
                    break;
                }
                let pick = rng.gen_range(0..spendable.len());
                let (outpoint, coin) = spendable.swap_remove(pick);
                let outputs = if coin.amount >= 2 && rng.gen_bool(0.5) {
                    let first = rng.gen_range(1..coin.amount);
                    vec![
                        TxOut {
                            amount: first,
                            locking_script: wallet_script(rng.gen_range(0..WALLETS)),
                        },
                        TxOut {
                            amount: coin.amount - first,
                            locking_script: wallet_script(rng.gen_range(0..WALLETS)),
                        },
                    ]
                } else {
                    vec![TxOut {
                        amount: coin.amount,
                        locking_script: wallet_script(rng.gen_range(0..WALLETS)),
                    }]
                };
                txs.push(Transaction::new(
                    vec![TxIn {
                        prev_out: outpoint,
                        unlocking_script: coin.locking_script,
                    }],
                    outputs,
                ));
            }
        }
        for tx in &txs {
            for (index, output) in tx.outputs().iter().enumerate() {
                spendable.push((
                    OutPoint {
                        txid: tx.txid(),
                        index: index as u32,
                    },
                    output.clone(),
                ));
            }
        }
        spendable.shuffle(&mut rng);
        let block = Block::assemble(prev, txs, SYNTHETIC_BITS);
        prev = block.id();
        blocks.push(block);
    }
    Ok(blocks)
}

/// A deterministic placement-only chain: linked, mined headers whose Merkle
/// field is a seeded filler, each block nominally `MAX_BLOCK_SIZE` bytes.
pub fn make_placement_chain(block_count: usize, seed: u64) -> Result<Vec<Block>, InvalidParams> {
    if block_count == 0 {
        return Err(InvalidParams);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = Hash256::ZERO;
    let mut blocks = Vec::with_capacity(block_count);
    for _ in 0..block_count {
        let mut filler = [0u8; 32];
        rng.fill(&mut filler);
        let header = BlockHeader {
            hash_prev_block: prev,
            hash_merkle_root: Hash256(filler),
            bits: SYNTHETIC_BITS,
            nonce: 0,
        }
        .mine();
        prev = header.id();
        blocks.push(Block {
            header,
            content: BlockContent::PlacementOnly,
            nominal_size: MAX_BLOCK_SIZE,
        });
    }
    Ok(blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid chain parameters: block_count and txs_per_block must be at least 1")]
pub struct InvalidParams;
